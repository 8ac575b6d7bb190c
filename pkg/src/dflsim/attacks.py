"""Data- and model-poisoning behaviors of malicious clients.

The attacker sees the whole round snapshot (every client's committed and
intermediate model, the topology, and the defense parameters) and may send
a different payload along every edge. `craft_models` is deterministic
given the spec, the snapshot and the master seed carried inside it.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model as model_mod
from .aggregation import AggregationContext, AggregatorSpec, KRUM, aggregate_with_info
from .backend import kernels
from .data import CLASSIFICATION, REGRESSION
from .graph import Topology
from .rng import substream

NONE = "none"
LABEL_FLIP = "label_flip"
FEATURE = "feature"
GAUSSIAN = "gaussian"
KRUM_ATTACK = "krum_attack"
TRIM_ATTACK = "trim_attack"
BACKDOOR = "backdoor"
ADAPTIVE = "adaptive"
LIE = "lie"
DISSENSUS = "dissensus"

DATA_POISONING = (LABEL_FLIP, FEATURE)
MODEL_POISONING = (GAUSSIAN, KRUM_ATTACK, TRIM_ATTACK, BACKDOOR, ADAPTIVE, LIE, DISSENSUS)
KINDS = (NONE,) + DATA_POISONING + MODEL_POISONING


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    variance: float = 200.0          # gaussian payload variance
    feature_variance: float = 1000.0  # feature-poisoning variance
    label_bias: float = 5.0          # regression label-flip offset
    epsilon: float = 1.0             # trim sampling width / dissensus push
    trigger_value: float = 1.0       # backdoor: value stamped on feature 0
    target_label: int = 0            # backdoor target class
    scale: float = 0.0               # backdoor scale; 0 means client count

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.variance <= 0 or self.feature_variance <= 0:
            raise ValueError("attack variances must be positive")


@dataclass
class AttackContext:
    """Read-only snapshot of one round, as seen by the attacker."""

    topology: Topology
    committed: np.ndarray      # (n, d) models at the start of the round
    intermediate: np.ndarray   # (n, d) post-local-training models
    round: int
    total_rounds: int
    active: np.ndarray         # (n,) bool connectivity this round
    alpha: float
    aggregator: AggregatorSpec
    model_spec: Optional[model_mod.ModelSpec] = None
    eta: float = 0.0
    local_iterations: int = 1
    batch_size: int = 0
    shards: dict = field(default_factory=dict)  # malicious id -> (features, targets)
    master_seed: int = 0

    def visible_benign(self):
        return [
            i
            for i in range(self.topology.n)
            if self.active[i] and i not in self.topology.malicious
        ]


def poison_data(kind: str, features: np.ndarray, targets: np.ndarray, dataset_kind: str,
                seed: int, n_classes: int = 0, spec: AttackSpec = None):
    """Return a poisoned copy of one shard; sizes and dims never change."""
    spec = spec or AttackSpec(kind=kind)
    if kind == LABEL_FLIP:
        if dataset_kind == REGRESSION:
            return features.copy(), targets + spec.label_bias
        if n_classes == 2:
            return features.copy(), (1 - targets).astype(targets.dtype)
        if n_classes < 6:
            raise ValueError("label flip for multiclass data needs classes 3 and 5 to exist")
        flipped = targets.copy()
        flipped[targets == 3] = 5
        return features.copy(), flipped
    if kind == FEATURE:
        rng = substream(seed, "feature_poison")
        noise = rng.normal(0.0, math.sqrt(spec.feature_variance), size=features.shape)
        return noise, targets.copy()
    raise ValueError(f"{kind!r} is not a data-poisoning kind")


def inv_norm_cdf(p: float) -> float:
    """Inverse standard-normal CDF via Acklam's rational approximation.

    Absolute error below 1.2e-9 on (0, 1).
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie strictly inside (0, 1)")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    p_low, p_high = 0.02425, 1 - 0.02425
    if p < p_low:
        q = math.sqrt(-2 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    if p > p_high:
        q = math.sqrt(-2 * math.log(1 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / \
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1)
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / \
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)


def _benign_mean_update(ctx: AttackContext, benign):
    now = ctx.intermediate[benign].mean(axis=0)
    before = ctx.committed[benign].mean(axis=0)
    return now, now - before


def _active_benign_neighbors(ctx: AttackContext, client: int):
    return [
        int(j)
        for j in ctx.topology.neighbors(client)
        if ctx.active[j] and int(j) not in ctx.topology.malicious
    ]


def craft_models(spec: AttackSpec, ctx: AttackContext, malicious_id: int, notes=None):
    """Payloads a malicious client sends this round: benign neighbor -> vector.

    Data-poisoning kinds return an empty map (the poisoned shard already did
    the work; the client sends its honestly-trained model). Attacks that
    need benign statistics fall back to the gaussian payload when no benign
    client is visible, recording a note.
    """
    if notes is None:
        notes = []
    if malicious_id not in ctx.topology.malicious:
        raise ValueError(f"client {malicious_id} is not malicious")
    if spec.kind in (NONE,) + DATA_POISONING:
        return {}
    targets = _active_benign_neighbors(ctx, malicious_id)
    if not targets:
        return {}
    d = ctx.intermediate.shape[1]
    rng = substream(ctx.master_seed, "attack", malicious_id, ctx.round)
    benign = ctx.visible_benign()

    kind = spec.kind
    if kind != GAUSSIAN and not benign:
        notes.append(f"attack {kind}: no visible benign client, gaussian fallback")
        kind = GAUSSIAN

    if kind == GAUSSIAN:
        payload = rng.normal(0.0, math.sqrt(spec.variance), size=d)
        return {i: payload for i in targets}

    if kind == KRUM_ATTACK:
        payload = _craft_krum(spec, ctx, benign, notes)
        return {i: payload for i in targets}

    if kind == TRIM_ATTACK:
        payload = _craft_trim(spec, ctx, benign, rng)
        return {i: payload for i in targets}

    if kind == BACKDOOR:
        payload = _craft_backdoor(spec, ctx, malicious_id, rng, notes)
        return {i: payload for i in targets}

    if kind == ADAPTIVE:
        return _craft_adaptive(ctx, benign, targets)

    if kind == LIE:
        payload = _craft_lie(ctx, benign)
        return {i: payload for i in targets}

    if kind == DISSENSUS:
        return _craft_dissensus(spec, ctx, targets)

    raise ValueError(f"unhandled attack kind {kind!r}")


def _sign_nonzero(vec):
    return np.where(vec >= 0.0, 1.0, -1.0)


def _krum_reference(ctx: AttackContext, benign):
    for i in benign:
        if any(int(j) in ctx.topology.malicious and ctx.active[j] for j in ctx.topology.neighbors(i)):
            return i
    return benign[0]


def _krum_selects_crafted(ctx, ref, crafted):
    """Simulate the reference neighbor's Krum over its real round pool."""
    received = []
    for j in ctx.topology.neighbors(ref):
        j = int(j)
        if not ctx.active[j]:
            continue
        received.append((j, crafted if j in ctx.topology.malicious else ctx.intermediate[j]))
    if not received:
        return False
    sim_spec = AggregatorSpec(
        rule=KRUM,
        gamma=ctx.aggregator.gamma,
        kappa=ctx.aggregator.kappa,
        malicious_count_mode=ctx.aggregator.malicious_count_mode,
        malicious_fraction=ctx.aggregator.malicious_fraction,
    )
    sim_ctx = AggregationContext(
        own=ctx.intermediate[ref],
        received=received,
        round=ctx.round,
        total_rounds=ctx.total_rounds,
        alpha=0.0,  # inspect the raw selection, not the mixed model
        self_id=ref,
        malicious_count=sum(1 for j, _ in received if j in ctx.topology.malicious),
    )
    selected, _ = aggregate_with_info(sim_spec, sim_ctx)
    return np.array_equal(selected, crafted)


def _craft_krum(spec, ctx, benign, notes):
    """Common crafted vector pushing against the benign update direction.

    The deviation scale theta is maximized by bisection subject to a
    simulated Krum at a benign reference neighbor still selecting the
    crafted vector.
    """
    mean_benign, update = _benign_mean_update(ctx, benign)
    direction = _sign_nonzero(update)
    ref = _krum_reference(ctx, benign)
    spread = kernels.dists_to_ref(ctx.intermediate[benign], mean_benign)
    theta_max = max(float(spread.max()), 1e-6)
    lo, hi = 0.0, theta_max
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if _krum_selects_crafted(ctx, ref, mean_benign - mid * direction):
            lo = mid
        else:
            hi = mid
    theta = lo
    if theta == 0.0:
        # even tiny deviations lose the selection; keep a negligible push
        theta = theta_max * 2.0 ** -20
        if not _krum_selects_crafted(ctx, ref, mean_benign - theta * direction):
            notes.append("krum_attack: selection not achieved at minimal deviation")
    return mean_benign - theta * direction


def _craft_trim(spec, ctx, benign, rng):
    """Per-coordinate values just outside the benign range, against the update."""
    mean_benign, update = _benign_mean_update(ctx, benign)
    lo = ctx.intermediate[benign].min(axis=0)
    hi = ctx.intermediate[benign].max(axis=0)
    u = rng.random(lo.shape[0])
    below = lo - u * np.abs(lo) * spec.epsilon
    above = hi + u * np.abs(hi) * spec.epsilon
    return np.where(update > 0.0, below, above)


def _craft_backdoor(spec, ctx, malicious_id, rng, notes):
    """Train on the trigger-stamped shard, then scale by the client count."""
    if ctx.model_spec is None or ctx.model_spec.family != model_mod.MULTINOMIAL_LOGISTIC:
        raise ValueError("backdoor attack needs a classification model")
    if malicious_id not in ctx.shards:
        raise ValueError("backdoor attack needs the malicious client's shard in the context")
    features, targets = ctx.shards[malicious_id]
    stamped = features.copy()
    stamped[:, 0] = spec.trigger_value
    aug_x = np.concatenate([features, stamped])
    aug_y = np.concatenate([targets, np.full(len(targets), spec.target_label, dtype=targets.dtype)])
    batch = ctx.batch_size if ctx.batch_size > 0 else len(aug_x)
    batches = rng.integers(0, len(aug_x), size=(ctx.local_iterations, batch)).astype(np.int64)
    w = kernels.logreg_sgd(
        aug_x, aug_y, ctx.committed[malicious_id].copy(), ctx.eta, batches,
        ctx.model_spec.n_classes,
    )
    factor = spec.scale if spec.scale > 0 else float(ctx.topology.n)
    return w * factor


def _craft_adaptive(ctx, benign, targets):
    """Per-edge payloads riding exactly on the acceptance boundary.

    Each targeted neighbor i receives its own intermediate model displaced
    by the largest distance the distance filter still accepts, in the unit
    direction opposing the benign mean update.
    """
    _, update = _benign_mean_update(ctx, benign)
    norm = float(np.linalg.norm(update))
    u = np.zeros_like(update) if norm == 0.0 else -update / norm
    decay = math.exp(-ctx.aggregator.kappa * ctx.round / ctx.total_rounds)
    payloads = {}
    for i in targets:
        own = ctx.intermediate[i]
        theta = ctx.aggregator.gamma * decay * float(np.linalg.norm(own))
        payloads[i] = own + theta * u
    return payloads


def _craft_lie(ctx, benign):
    """Benign mean shifted by z_max benign standard deviations per coordinate."""
    n = ctx.topology.n
    m = len(ctx.topology.malicious)
    s = n // 2 + 1 - m
    quantile = (n - m - s) / (n - m)
    quantile = min(max(quantile, 1e-9), 1 - 1e-9)
    z_max = inv_norm_cdf(quantile)
    mu = ctx.intermediate[benign].mean(axis=0)
    sigma = ctx.intermediate[benign].std(axis=0)
    return mu + z_max * sigma


def _craft_dissensus(spec, ctx, targets):
    """Push each neighbor away from its own benign neighborhood mean."""
    payloads = {}
    for i in targets:
        nbrs = _active_benign_neighbors(ctx, i)
        own = ctx.intermediate[i]
        if not nbrs:
            payloads[i] = own.copy()
        else:
            neigh_mean = ctx.intermediate[nbrs].mean(axis=0)
            payloads[i] = own - spec.epsilon * (neigh_mean - own)
    return payloads


def asr(spec: AttackSpec, model_spec: model_mod.ModelSpec, w: np.ndarray, test) -> float:
    """Backdoor attack success rate on trigger-stamped test examples."""
    if spec.kind != BACKDOOR:
        raise ValueError("attack success rate is defined for the backdoor attack")
    if test.kind != CLASSIFICATION or model_spec.family != model_mod.MULTINOMIAL_LOGISTIC:
        raise ValueError("attack success rate needs a classification model")
    keep = test.targets != spec.target_label
    stamped = test.features[keep].copy()
    if stamped.shape[0] == 0:
        raise ValueError("no test examples outside the target class")
    stamped[:, 0] = spec.trigger_value
    pred = model_mod.predict(model_spec, w, stamped)
    return float(np.mean(pred == spec.target_label))
