"""Evaluation metrics over benign clients.

All worst-case metrics take the maximum over benign clients; mean variants
are reported alongside but never gate anything (a good average can hide a
bad client).
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model as model_mod
from .data import CLASSIFICATION, REGRESSION


@dataclass
class MetricRecord:
    max_mse: Optional[float] = None
    max_ter: Optional[float] = None
    avg_ter: Optional[float] = None
    max_asr: Optional[float] = None
    consensus_error: float = 0.0
    per_client: dict = field(default_factory=dict)


def _as_mapping(models) -> dict:
    if isinstance(models, dict):
        return models
    return {i: w for i, w in enumerate(models)}


def per_client_metric(models, spec, test) -> dict:
    """Test MSE (regression) or test error rate (classification) per client."""
    out = {}
    for i, w in _as_mapping(models).items():
        if test.kind == REGRESSION:
            resid = test.features @ w - test.targets
            out[i] = float(np.mean(resid * resid))
        else:
            pred = model_mod.predict(spec, w, test.features)
            out[i] = float(np.mean(pred != test.targets))
    return out


def max_mse(models, spec, test) -> float:
    """Worst test mean squared error among benign clients."""
    if test.kind != REGRESSION:
        raise ValueError("max_mse needs a regression test set")
    per = per_client_metric(models, spec, test)
    if not per:
        raise ValueError("need at least one benign client")
    return max(per.values())


def max_ter(models, spec, test) -> float:
    """Worst test error rate among benign clients."""
    if test.kind != CLASSIFICATION:
        raise ValueError("max_ter needs a classification test set")
    per = per_client_metric(models, spec, test)
    if not per:
        raise ValueError("need at least one benign client")
    return max(per.values())


def avg_ter(models, spec, test) -> float:
    if test.kind != CLASSIFICATION:
        raise ValueError("avg_ter needs a classification test set")
    per = per_client_metric(models, spec, test)
    if not per:
        raise ValueError("need at least one benign client")
    return sum(per.values()) / len(per)


def consensus_error(models) -> float:
    """Mean squared distance of each benign model from the benign average."""
    mapping = _as_mapping(models)
    if not mapping:
        raise ValueError("need at least one benign client")
    stack = np.stack(list(mapping.values()))
    center = stack.mean(axis=0)
    diffs = stack - center
    return float(np.mean(np.einsum("ij,ij->i", diffs, diffs)))


def max_asr(models, spec, test, attack) -> float:
    """Worst backdoor attack success rate among benign clients."""
    from . import attacks as attacks_mod

    vals = [attacks_mod.asr(attack, spec, w, test) for w in _as_mapping(models).values()]
    if not vals:
        raise ValueError("need at least one benign client")
    return max(vals)


def summarize(models, spec, test, attack=None) -> MetricRecord:
    """Final-round metric record for one experiment."""
    record = MetricRecord(consensus_error=consensus_error(models))
    record.per_client = per_client_metric(models, spec, test)
    if test.kind == REGRESSION:
        record.max_mse = max(record.per_client.values())
    else:
        record.max_ter = max(record.per_client.values())
        record.avg_ter = sum(record.per_client.values()) / len(record.per_client)
        if attack is not None:
            record.max_asr = max_asr(models, spec, test, attack)
    return record


def comm_cost(reports) -> dict:
    """Total message and scalar-volume counts per client across rounds."""
    if not reports:
        return {"messages_per_client": np.zeros(0, dtype=np.int64), "messages_total": 0, "scalars_total": 0}
    per_client = np.zeros_like(reports[0].messages_per_client)
    scalars = 0
    for r in reports:
        per_client = per_client + r.messages_per_client
        scalars += r.scalars_total
    return {
        "messages_per_client": per_client,
        "messages_total": int(per_client.sum()),
        "scalars_total": int(scalars),
    }
