"""The round engine: local training, exchange, aggregation, orchestration.

Each round has two steps. Step I: every client (active or not) runs local
SGD from its committed model to an intermediate model; active clients
exchange intermediates with active neighbors, malicious clients substitute
crafted per-edge payloads. Step II: every active benign client filters and
combines what it received and commits; inactive clients and (under model
poisoning) malicious clients commit their intermediate directly.

All cross-client reads go through an immutable per-round snapshot and all
per-client work is a pure function of that snapshot plus the client's own
named RNG substream, so results are identical for any worker count.
"""

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attacks as attacks_mod
from . import data as data_mod
from . import graph as graph_mod
from . import metrics as metrics_mod
from . import model as model_mod
from .aggregation import (
    AggregationContext,
    AggregatorSpec,
    LEARN,
    TRIM_MEAN,
    aggregate_self_inclusive_with_info,
    aggregate_with_info,
)
from .backend import BACKEND, kernels
from .config import ExperimentConfig, HETEROGENEOUS_POOL, config_hash
from .rng import substream

CONNECTIVITY_WARNING = "benign subgraph is disconnected; convergence guarantees do not apply"

# Training on poisoned shards can diverge without bound at the configured
# learning rate. Malicious intermediates are projected onto this ball before
# exchange: every rule treats a payload this large exactly like a bigger one,
# and float64 arithmetic downstream stays finite.
MALICIOUS_NORM_CAP = 1e100


@dataclass
class ClientState:
    id: int
    role: str  # "benign" | "malicious"
    model: np.ndarray
    shard: np.ndarray  # index array into the training split
    alpha: float
    aggregator: AggregatorSpec
    local_iterations: int
    batch_size: int


@dataclass
class RoundReport:
    round: int
    active: list
    test_metric: dict = field(default_factory=dict)   # benign id -> test mse / error rate
    accepted: dict = field(default_factory=dict)      # benign id -> |accepted set|
    fallbacks: int = 0
    flags: list = field(default_factory=list)
    messages_per_client: np.ndarray = None
    messages_total: int = 0
    scalars_total: int = 0
    consensus_error: float = 0.0


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    final_models: np.ndarray
    reports: list
    metrics: "metrics_mod.MetricRecord"
    messages_per_client: np.ndarray
    metadata: dict


def _cap_norm(w: np.ndarray) -> np.ndarray:
    finite = np.nan_to_num(w, nan=0.0, posinf=MALICIOUS_NORM_CAP, neginf=-MALICIOUS_NORM_CAP)
    finite = np.clip(finite, -MALICIOUS_NORM_CAP, MALICIOUS_NORM_CAP)
    norm = np.linalg.norm(finite)
    if norm > MALICIOUS_NORM_CAP:
        return finite * (MALICIOUS_NORM_CAP / norm)
    return finite


def local_training(w, features, targets, spec, eta, iterations, batch_size, rng):
    """Run `iterations` SGD steps on seeded mini-batches; returns the new vector.

    The step uses the batch-total gradient (summed, not averaged, over the
    batch), so the configured learning rate plays the role of a per-example
    rate. batch_size 0 means the full shard, which makes the pass
    deterministic plain gradient descent.
    """
    if len(features) == 0:
        raise ValueError("client shard is empty")
    if eta < 0:
        raise ValueError("learning rate must be nonnegative")
    n = len(features)
    if batch_size <= 0 or batch_size >= n:
        batches = np.tile(np.arange(n, dtype=np.int64), (iterations, 1))
    else:
        batches = rng.integers(0, n, size=(iterations, batch_size)).astype(np.int64)
    if spec.family == model_mod.LINEAR_REGRESSION:
        return kernels.linreg_sgd(features, targets, w.copy(), eta, batches)
    return kernels.logreg_sgd(features, targets, w.copy(), eta, batches, spec.n_classes)


def build_topology(cfg: ExperimentConfig, master_seed: int) -> graph_mod.Topology:
    t = cfg.topology
    seed = substream(master_seed, "topology").integers(2**63)
    if t.kind == "regular":
        topo = graph_mod.gen_regular(cfg.clients, t.degree, seed)
    elif t.kind == "complete":
        topo = graph_mod.gen_complete(cfg.clients)
    elif t.kind == "ring":
        topo = graph_mod.gen_ring(cfg.clients)
    elif t.kind == "erdos_renyi":
        topo = graph_mod.gen_erdos_renyi(cfg.clients, t.p_edge, seed)
    elif t.kind == "small_world":
        topo = graph_mod.gen_small_world(cfg.clients, t.k, t.p_rewire, seed)
    elif t.kind == "file":
        with open(t.path) as fh:
            topo = graph_mod.from_text(fh.read())
        if topo.n != cfg.clients:
            raise ValueError(f"topology file has {topo.n} clients, config says {cfg.clients}")
    else:
        raise ValueError(f"unknown topology kind {t.kind!r}")
    # an attack-free run has no malicious clients, whatever the fraction says
    if cfg.attack.kind == attacks_mod.NONE:
        return topo.with_malicious(())
    if topo.malicious:
        return topo
    count = int(cfg.clients * cfg.malicious_fraction)
    roles_rng = substream(master_seed, "roles")
    ids = roles_rng.choice(cfg.clients, size=count, replace=False)
    return topo.with_malicious(ids)


def build_dataset(cfg: ExperimentConfig, master_seed: int):
    d = cfg.dataset
    seed = substream(master_seed, "data").integers(2**63)
    if d.kind == "regression":
        train, test, w_star = data_mod.gen_synthetic_regression(
            d.examples, d.dim, seed, noise_std=d.noise_std, weight_std=d.weight_std
        )
        spec = model_mod.ModelSpec(model_mod.LINEAR_REGRESSION, d.dim)
        return train, test, spec, w_star
    train, test = data_mod.gen_synthetic_classification(
        d.examples, d.dim, d.classes, d.cluster_sep, seed
    )
    spec = model_mod.ModelSpec(model_mod.MULTINOMIAL_LOGISTIC, d.dim, d.classes)
    return train, test, spec, None


def build_partition(cfg: ExperimentConfig, train, master_seed: int):
    p = cfg.partition
    seed = substream(master_seed, "partition").integers(2**63)
    if p.scheme == "iid":
        return data_mod.partition_iid(train, cfg.clients, seed)
    if p.scheme == "grouped":
        return data_mod.partition_noniid_grouped(train, cfg.clients, p.p, seed)
    return data_mod.partition_noniid_slices(train, cfg.clients, p.classes_per_client, seed)


class Simulation:
    """Mutable engine state for one experiment; `step` runs one round."""

    def __init__(self, config: ExperimentConfig, workers: int = 1, topology=None):
        config.validate()
        self.config = config
        self.workers = max(1, workers)
        self.seed = config.seed
        self.topology = topology if topology is not None else build_topology(config, self.seed)
        self.train, self.test, self.model_spec, self.w_star = build_dataset(config, self.seed)
        self.plan = build_partition(config, self.train, self.seed)
        self.attack = config.attack.to_spec()
        self.t = 0
        self.flags = []
        self._poison_shards()
        self._init_clients()
        self.models = np.stack([c.model for c in self.clients])
        self.messages_per_client = np.zeros(config.clients, dtype=np.int64)
        if not graph_mod.benign_subgraph_connected(self.topology):
            warnings.warn(CONNECTIVITY_WARNING)
            self.flags.append("benign-subgraph-disconnected")

    # -- setup ---------------------------------------------------------

    def _poison_shards(self):
        self.shard_data = {}
        for i in range(self.config.clients):
            idx = self.plan.shards[i]
            x = self.train.features[idx]
            y = self.train.targets[idx]
            if (
                i in self.topology.malicious
                and self.attack.kind in attacks_mod.DATA_POISONING
            ):
                x, y = attacks_mod.poison_data(
                    self.attack.kind, x, y, self.train.kind,
                    substream(self.seed, "poison", i).integers(2**63),
                    n_classes=self.train.n_classes, spec=self.attack,
                )
            self.shard_data[i] = (np.ascontiguousarray(x), np.ascontiguousarray(y))

    def _init_clients(self):
        cfg = self.config
        shared = model_mod.zero_params(self.model_spec)
        self.clients = []
        for i in range(cfg.clients):
            if cfg.init == "random":
                w0 = substream(self.seed, "init", i).normal(0.0, cfg.init_std, self.model_spec.d_model)
            else:
                w0 = shared.copy()
            alpha = cfg.alpha
            if cfg.alpha_mode == "per_client":
                alpha = float(substream(self.seed, "alpha", i).random())
            rule = cfg.aggregator.to_spec(cfg.malicious_fraction)
            if cfg.aggregator_mode == "per_client":
                name = HETEROGENEOUS_POOL[
                    substream(self.seed, "rules", i).integers(len(HETEROGENEOUS_POOL))
                ]
                rule = AggregatorSpec(
                    rule=name, gamma=rule.gamma, kappa=rule.kappa,
                    malicious_count_mode=rule.malicious_count_mode,
                    malicious_fraction=rule.malicious_fraction,
                )
            role = "malicious" if i in self.topology.malicious else "benign"
            self.clients.append(ClientState(
                id=i, role=role, model=w0, shard=self.plan.shards[i],
                alpha=alpha, aggregator=rule,
                local_iterations=cfg.local.iterations, batch_size=cfg.local.batch_size,
            ))

    # -- per-round helpers ---------------------------------------------

    def _alpha_for(self, i, t):
        if self.config.alpha_mode == "per_round":
            return float(substream(self.seed, "alpha", i, t).random())
        return self.clients[i].alpha

    def _rule_for(self, i, t) -> AggregatorSpec:
        base = self.clients[i].aggregator
        if self.config.aggregator_mode == "per_round":
            name = HETEROGENEOUS_POOL[
                substream(self.seed, "rules", i, t).integers(len(HETEROGENEOUS_POOL))
            ]
            return AggregatorSpec(
                rule=name, gamma=base.gamma, kappa=base.kappa,
                malicious_count_mode=base.malicious_count_mode,
                malicious_fraction=base.malicious_fraction,
            )
        return base

    def _active_mask(self, t) -> np.ndarray:
        if self.config.dropout <= 0.0:
            return np.ones(self.config.clients, dtype=bool)
        mask = graph_mod.sample_mask(self.topology, self.config.dropout, t, self.seed)
        return mask.to_array(self.config.clients)

    def _map(self, fn, items):
        if self.workers == 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(fn, items))

    def _intermediate(self, t) -> np.ndarray:
        def train_one(i):
            c = self.clients[i]
            x, y = self.shard_data[i]
            rng = substream(self.seed, "client", i, t)
            return local_training(
                self.models[i], x, y, self.model_spec, self.config.learning_rate,
                c.local_iterations, c.batch_size, rng,
            )

        rows = self._map(train_one, list(range(self.config.clients)))
        half = np.stack(rows)
        for i in self.topology.malicious:
            half[i] = _cap_norm(half[i])
        return half

    def _attack_context(self, half, t, active) -> attacks_mod.AttackContext:
        return attacks_mod.AttackContext(
            topology=self.topology,
            committed=self.models,
            intermediate=half,
            round=t,
            total_rounds=self.config.rounds,
            active=active,
            alpha=self.config.alpha,
            aggregator=self.config.aggregator.to_spec(self.config.malicious_fraction),
            model_spec=self.model_spec,
            eta=self.config.learning_rate,
            local_iterations=self.config.local.iterations,
            batch_size=self.config.local.batch_size,
            shards={
                i: self.shard_data[i]
                for i in self.topology.malicious
                if self.attack.kind == attacks_mod.BACKDOOR
            },
            master_seed=self.seed,
        )

    def _craft_all(self, half, t, active):
        payloads = {}
        notes = []
        if self.attack.kind in (attacks_mod.NONE,) + attacks_mod.DATA_POISONING:
            return payloads, notes
        actx = self._attack_context(half, t, active)
        for m in sorted(self.topology.malicious):
            if active[m]:
                payloads[m] = attacks_mod.craft_models(self.attack, actx, m, notes)
        return payloads, notes

    def _payload_from(self, j, target, half, payloads):
        per_edge = payloads.get(j)
        if per_edge is not None and target in per_edge:
            return per_edge[target]
        return half[j]

    def _eval_loss_fn(self, i, t):
        x, y = self.shard_data[i]
        rng = substream(self.seed, "ubar", i, t)
        batch = self.clients[i].batch_size or 32
        idx = rng.integers(0, len(x), size=min(batch, len(x)))
        xb, yb = x[idx], y[idx]
        return lambda w: model_mod.loss(self.model_spec, w, xb, yb)

    # -- rounds ----------------------------------------------------------

    def step(self) -> RoundReport:
        if self.clients[0].aggregator.rule == LEARN and self.config.aggregator_mode == "global":
            report = self._learn_round(self.t)
        else:
            report = self._standard_round(self.t)
        self.t += 1
        self._maybe_checkpoint()
        return report

    def _standard_round(self, t) -> RoundReport:
        cfg = self.config
        active = self._active_mask(t)
        half = self._intermediate(t)
        payloads, notes = self._craft_all(half, t, active)
        report = RoundReport(round=t, active=[int(i) for i in np.flatnonzero(active)])
        report.flags.extend(notes)
        messages = np.zeros(cfg.clients, dtype=np.int64)

        data_attack = self.attack.kind in attacks_mod.DATA_POISONING

        def combine_one(i):
            c = self.clients[i]
            if not active[i]:
                return half[i], None
            is_model_attacker = c.role == "malicious" and not data_attack
            if is_model_attacker:
                return half[i], None
            received = []
            mal_count = 0
            for j in self.topology.neighbors(i):
                j = int(j)
                if not active[j]:
                    continue
                received.append((j, self._payload_from(j, i, half, payloads)))
                if j in self.topology.malicious:
                    mal_count += 1
            rule = self._rule_for(i, t)
            ctx = AggregationContext(
                own=half[i],
                received=received,
                round=t,
                total_rounds=cfg.rounds,
                alpha=self._alpha_for(i, t),
                self_id=i,
                malicious_count=mal_count,
                eval_loss=self._eval_loss_fn(i, t) if rule.rule == "ubar" else None,
            )
            if cfg.aggregation == "self_inclusive":
                return aggregate_self_inclusive_with_info(rule, ctx)
            return aggregate_with_info(rule, ctx)

        results = self._map(combine_one, list(range(cfg.clients)))

        new_models = np.empty_like(self.models)
        for i in range(cfg.clients):  # commits serialized in ascending id order
            vec, info = results[i]
            if not np.all(np.isfinite(vec)):
                raise FloatingPointError(f"client {i} produced a non-finite model at round {t}")
            new_models[i] = vec
            if active[i]:
                if self.clients[i].role == "malicious" and not data_attack:
                    targets = [
                        int(j) for j in self.topology.neighbors(i)
                        if active[j] and int(j) not in self.topology.malicious
                    ]
                    messages[i] = len(targets)
                else:
                    messages[i] = sum(1 for j in self.topology.neighbors(i) if active[j])
            if info is not None:
                report.accepted[i] = info.accepted
                if info.fallback:
                    report.fallbacks += 1
                report.flags.extend(info.notes)
        self.models = new_models
        self._finish_report(report, messages, t)
        return report

    def _learn_round(self, t) -> RoundReport:
        """One round of the multi-exchange protocol.

        Round index is 1-based here: round t performs ceil(log2(t+1))
        update gossip sub-rounds (trimmed-mean, no mixing) and then one
        trimmed-mean model exchange.
        """
        cfg = self.config
        t_learn = t + 1
        active = self._active_mask(t)
        half = self._intermediate(t)
        updates = half - self.models
        sub_rounds = math.ceil(math.log2(t_learn)) if t_learn > 1 else 0
        report = RoundReport(round=t, active=[int(i) for i in np.flatnonzero(active)])
        messages = np.zeros(cfg.clients, dtype=np.int64)

        def gossip_one(args):
            i, current = args
            if not active[i]:
                return current[i]
            received = [
                (int(j), current[int(j)])
                for j in self.topology.neighbors(i)
                if active[j]
            ]
            if not received:
                return current[i]
            ids = [s for s, _ in received]
            mat = np.stack([v for _, v in received])
            spec = self.clients[i].aggregator
            trim = math.ceil(spec.malicious_fraction * len(ids))
            if spec.malicious_count_mode == "oracle":
                trim = sum(1 for s in ids if s in self.topology.malicious)
            trim = min(trim, (len(ids) - 1) // 2)
            return kernels.trimmed_mean(mat, trim)

        for _ in range(sub_rounds):
            rows = self._map(gossip_one, [(i, updates) for i in range(cfg.clients)])
            updates = np.stack(rows)
            for i in range(cfg.clients):
                if active[i]:
                    messages[i] += sum(1 for j in self.topology.neighbors(i) if active[j])

        w_temp = self.models + updates
        payloads, notes = self._craft_all(w_temp, t, active)
        report.flags.extend(notes)
        data_attack = self.attack.kind in attacks_mod.DATA_POISONING

        def exchange_one(i):
            if not active[i]:
                return half[i], None
            c = self.clients[i]
            if c.role == "malicious" and not data_attack:
                return w_temp[i], None
            received = []
            mal_count = 0
            for j in self.topology.neighbors(i):
                j = int(j)
                if not active[j]:
                    continue
                received.append((j, self._payload_from(j, i, w_temp, payloads)))
                if j in self.topology.malicious:
                    mal_count += 1
            spec = self.clients[i].aggregator
            trim_spec = AggregatorSpec(
                rule=TRIM_MEAN, gamma=spec.gamma, kappa=spec.kappa,
                malicious_count_mode=spec.malicious_count_mode,
                malicious_fraction=spec.malicious_fraction,
            )
            ctx = AggregationContext(
                own=w_temp[i], received=received, round=t, total_rounds=cfg.rounds,
                alpha=self._alpha_for(i, t), self_id=i, malicious_count=mal_count,
            )
            return aggregate_with_info(trim_spec, ctx)

        results = self._map(exchange_one, list(range(cfg.clients)))
        new_models = np.empty_like(self.models)
        for i in range(cfg.clients):
            vec, info = results[i]
            if not np.all(np.isfinite(vec)):
                raise FloatingPointError(f"client {i} produced a non-finite model at round {t}")
            new_models[i] = vec
            if active[i]:
                messages[i] += sum(1 for j in self.topology.neighbors(i) if active[j])
            if info is not None:
                report.accepted[i] = info.accepted
                if info.fallback:
                    report.fallbacks += 1
        self.models = new_models
        self._finish_report(report, messages, t)
        return report

    def _finish_report(self, report, messages, t):
        cfg = self.config
        d = self.model_spec.d_model
        report.messages_per_client = messages
        report.messages_total = int(messages.sum())
        report.scalars_total = int(messages.sum()) * d
        self.messages_per_client += messages
        benign = self.topology.benign
        report.consensus_error = metrics_mod.consensus_error(
            {i: self.models[i] for i in benign}
        )
        if cfg.eval_every > 0 and ((t + 1) % cfg.eval_every == 0 or t + 1 == cfg.rounds):
            report.test_metric = metrics_mod.per_client_metric(
                {i: self.models[i] for i in benign}, self.model_spec, self.test
            )

    def _maybe_checkpoint(self):
        cfg = self.config
        if cfg.checkpoint_every <= 0 or self.t % cfg.checkpoint_every != 0:
            return
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)
        for i in range(cfg.clients):
            path = os.path.join(cfg.checkpoint_dir, f"round{self.t:05d}_client{i:03d}.csv")
            with open(path, "w") as fh:
                fh.write(model_mod.to_csv_line(self.models[i]) + "\n")

    def run(self) -> ExperimentResult:
        reports = [self.step() for _ in range(self.config.rounds)]
        benign_models = {i: self.models[i] for i in self.topology.benign}
        record = metrics_mod.summarize(
            benign_models, self.model_spec, self.test,
            attack=self.attack if self.attack.kind == attacks_mod.BACKDOOR else None,
        )
        metadata = {
            "backend": BACKEND,
            "config_hash": config_hash(self.config),
            "flags": sorted(set(self.flags + [f for r in reports for f in r.flags])),
            "malicious": sorted(self.topology.malicious),
            "topology_params": vars(self.config.topology).copy(),
            "local_iterations": self.config.local.iterations,
            "batch_size": self.config.local.batch_size,
        }
        return ExperimentResult(
            config=self.config,
            final_models=self.models.copy(),
            reports=reports,
            metrics=record,
            messages_per_client=self.messages_per_client.copy(),
            metadata=metadata,
        )


def run_round(sim: Simulation, t: int) -> RoundReport:
    """Advance the simulation by one round; `t` must match its clock."""
    if t != sim.t:
        raise ValueError(f"simulation clock is at round {sim.t}, not {t}")
    return sim.step()


def run_learn_round(sim: Simulation, t: int) -> RoundReport:
    """Advance a multi-exchange (learn) simulation by one round."""
    if sim.clients[0].aggregator.rule != LEARN:
        raise ValueError("run_learn_round needs a simulation configured with the learn rule")
    return run_round(sim, t)


def run_experiment(config: ExperimentConfig, workers: int = 1, topology=None) -> ExperimentResult:
    """Run the full T-round experiment described by `config`."""
    return Simulation(config, workers=workers, topology=topology).run()
