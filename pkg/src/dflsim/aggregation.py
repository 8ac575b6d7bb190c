"""Aggregation rules, applied from one client's viewpoint.

Every rule maps the client's own intermediate model plus the models it
received from neighbors to a combined vector. `aggregate` then mixes the
combined vector with the client's own model:

    w_next = alpha * own + (1 - alpha) * AGG(received)

`aggregate_self_inclusive` instead pools the client's own model with the
received ones and skips the mixing step entirely.

The distance-filter rule ("balance") accepts a neighbor model only while

    ||own - received|| <= gamma * exp(-kappa * t/T) * ||own||

and averages the accepted set; an empty acceptance set falls back to the
client's own model.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .backend import kernels

FEDAVG = "fedavg"
KRUM = "krum"
TRIM_MEAN = "trim_mean"
MEDIAN = "median"
FLTRUST = "fltrust"
UBAR = "ubar"
SCCLIP = "scclip"
BALANCE = "balance"
BALANCE_VARIANT1 = "balance_variant1"
BALANCE_VARIANT2 = "balance_variant2"
LEARN = "learn"  # handled by the protocol engine; listed for config validation

RULES = (
    FEDAVG,
    KRUM,
    TRIM_MEAN,
    MEDIAN,
    FLTRUST,
    UBAR,
    SCCLIP,
    BALANCE,
    BALANCE_VARIANT1,
    BALANCE_VARIANT2,
    LEARN,
)

# rules that need some guess of how many received models are malicious
C_DEPENDENT = (KRUM, TRIM_MEAN, UBAR)


@dataclass(frozen=True)
class AggregatorSpec:
    """Rule name plus rule-specific parameters.

    malicious_count_mode picks where c_i comes from for Krum/Trim-mean/UBAR:
    "fraction" uses the configured global fraction, "oracle" the true
    per-client count carried in the context.
    """

    rule: str
    gamma: float = 0.3
    kappa: float = 1.0
    malicious_count_mode: str = "fraction"
    malicious_fraction: float = 0.2

    def __post_init__(self):
        if self.rule not in RULES:
            raise ValueError(f"unknown aggregation rule {self.rule!r}")
        if self.gamma <= 0 or self.kappa <= 0:
            raise ValueError("gamma and kappa must be positive")
        if self.malicious_count_mode not in ("fraction", "oracle"):
            raise ValueError("malicious_count_mode must be 'fraction' or 'oracle'")
        if not 0.0 <= self.malicious_fraction < 1.0:
            raise ValueError("malicious_fraction must lie in [0, 1)")


@dataclass
class AggregationContext:
    """One client's view of a round: own model, received models, schedule."""

    own: np.ndarray
    received: list  # (sender id, vector), any order
    round: int
    total_rounds: int
    alpha: float = 0.5
    self_id: int = -1
    malicious_count: Optional[int] = None  # oracle: malicious among senders
    eval_loss: Optional[Callable[[np.ndarray], float]] = None  # ubar stage 2


@dataclass
class CombineInfo:
    accepted: int = 0
    fallback: bool = False
    notes: list = field(default_factory=list)


def _threshold(spec: AggregatorSpec, ctx: AggregationContext) -> float:
    decay = math.exp(-spec.kappa * ctx.round / ctx.total_rounds)
    return spec.gamma * decay * float(np.linalg.norm(ctx.own))


def balance_accepts(spec: AggregatorSpec, ctx: AggregationContext, w_j: np.ndarray) -> bool:
    """Distance filter of the balance rule; the boundary itself is accepted."""
    if w_j.shape != ctx.own.shape:
        raise ValueError("dimension mismatch between own and received model")
    return float(np.linalg.norm(ctx.own - w_j)) <= _threshold(spec, ctx)


def _sorted_pool(received):
    pool = sorted(received, key=lambda item: item[0])
    ids = [int(s) for s, _ in pool]
    mat = np.stack([np.asarray(v, dtype=np.float64) for _, v in pool])
    return ids, mat


def _trim_count(spec: AggregatorSpec, ctx: AggregationContext, pool_size: int) -> int:
    if spec.malicious_count_mode == "oracle" and ctx.malicious_count is not None:
        return int(ctx.malicious_count)
    return math.ceil(spec.malicious_fraction * pool_size)


def _combine(spec, ctx, ids, mat) -> tuple:
    """Apply the rule to the pooled models; no mixing here."""
    rule = spec.rule
    info = CombineInfo(accepted=len(ids))

    if rule == FEDAVG:
        return mat.sum(axis=0) / len(ids), info

    if rule == KRUM:
        trim = _trim_count(spec, ctx, len(ids))
        k_nearest = max(1, len(ids) - trim - 2)
        scores = kernels.krum_scores(mat, k_nearest)
        best = 0
        for i in range(1, len(ids)):
            if scores[i] < scores[best]:
                best = i  # ties keep the lowest sender id (ids are sorted)
        info.accepted = 1
        return mat[best].copy(), info

    if rule == TRIM_MEAN:
        trim = _trim_count(spec, ctx, len(ids))
        trim = min(trim, (len(ids) - 1) // 2)  # keep at least one value
        info.accepted = len(ids) - 2 * trim
        return kernels.trimmed_mean(mat, trim), info

    if rule == MEDIAN:
        return kernels.coord_median(mat), info

    if rule == FLTRUST:
        own_norm = float(np.linalg.norm(ctx.own))
        kept = []
        for row in mat:
            row_norm = float(np.linalg.norm(row))
            if row_norm == 0.0 or own_norm == 0.0:
                cos = 0.0
            else:
                cos = float(ctx.own @ row) / (own_norm * row_norm)
            if cos > 0.0:
                kept.append(row * (own_norm / row_norm))
        info.accepted = len(kept)
        if not kept:
            info.fallback = True
            info.notes.append("fltrust: no positive-similarity neighbor")
            return ctx.own.copy(), info
        return np.stack(kept).sum(axis=0) / len(kept), info

    if rule == UBAR:
        dists = kernels.dists_to_ref(mat, ctx.own)
        trim = _trim_count(spec, ctx, len(ids))
        keep = max(1, len(ids) - trim)
        order = sorted(range(len(ids)), key=lambda i: (dists[i], ids[i]))
        stage1 = order[:keep]
        if ctx.eval_loss is None:
            raise ValueError("ubar needs an eval_loss callable in the context")
        own_loss = ctx.eval_loss(ctx.own)
        losses = {i: ctx.eval_loss(mat[i]) for i in stage1}
        stage2 = [i for i in stage1 if losses[i] <= own_loss]
        if not stage2:
            stage2 = [min(stage1, key=lambda i: (losses[i], ids[i]))]
        info.accepted = len(stage2)
        return mat[stage2].sum(axis=0) / len(stage2), info

    if rule == SCCLIP:
        own_norm = float(np.linalg.norm(ctx.own))
        clipped = np.empty_like(mat)
        for i, row in enumerate(mat):
            delta = row - ctx.own
            dist = float(np.linalg.norm(delta))
            if dist == 0.0:
                clipped[i] = row
            else:
                clipped[i] = ctx.own + min(1.0, own_norm / dist) * delta
        return clipped.sum(axis=0) / len(ids), info

    if rule in (BALANCE, BALANCE_VARIANT1, BALANCE_VARIANT2):
        dists = kernels.dists_to_ref(mat, ctx.own)
        own_norm = float(np.linalg.norm(ctx.own))
        if rule == BALANCE:
            thresh = _threshold(spec, ctx)
            accept = dists <= thresh
        elif rule == BALANCE_VARIANT1:
            accept = dists <= spec.gamma * own_norm
        else:
            if own_norm == 0.0:
                accept = dists <= 0.0
            else:
                q = dists / own_norm
                q_med = float(np.median(q))
                accept = q <= min(q_med, spec.gamma)
        picked = np.flatnonzero(accept)
        info.accepted = len(picked)
        if len(picked) == 0:
            info.fallback = True
            info.notes.append("balance: empty acceptance set")
            return ctx.own.copy(), info
        return mat[picked].sum(axis=0) / len(picked), info

    raise ValueError(f"rule {rule!r} is not a combine-step rule")


def aggregate(spec: AggregatorSpec, ctx: AggregationContext) -> np.ndarray:
    vec, _ = aggregate_with_info(spec, ctx)
    return vec


def aggregate_with_info(spec: AggregatorSpec, ctx: AggregationContext):
    """Combine received models per the rule, then alpha-mix with own model.

    Returns (new model, CombineInfo). With no received models, or when the
    rule's own fallback triggers, the client keeps its own model exactly.
    """
    if not 0.0 <= ctx.alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if not ctx.received:
        return ctx.own.copy(), CombineInfo(accepted=0, fallback=True, notes=["no received models"])
    ids, mat = _sorted_pool(ctx.received)
    if mat.shape[1] != ctx.own.shape[0]:
        raise ValueError("received model dimension does not match own model")
    agg, info = _combine(spec, ctx, ids, mat)
    if info.fallback:
        return ctx.own.copy(), info
    return ctx.alpha * ctx.own + (1.0 - ctx.alpha) * agg, info


def aggregate_self_inclusive(spec: AggregatorSpec, ctx: AggregationContext) -> np.ndarray:
    vec, _ = aggregate_self_inclusive_with_info(spec, ctx)
    return vec


def aggregate_self_inclusive_with_info(spec: AggregatorSpec, ctx: AggregationContext):
    """Pool the client's own model with the received ones; no alpha-mixing."""
    if not ctx.received:
        return ctx.own.copy(), CombineInfo(accepted=1, fallback=True, notes=["no received models"])
    pool = list(ctx.received) + [(ctx.self_id, ctx.own)]
    ids, mat = _sorted_pool(pool)
    if mat.shape[1] != ctx.own.shape[0]:
        raise ValueError("received model dimension does not match own model")
    agg, info = _combine(spec, ctx, ids, mat)
    if info.fallback:
        return ctx.own.copy(), info
    return agg, info
