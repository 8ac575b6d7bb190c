"""Aggregation rules against worked examples and brute-force oracles."""

import itertools
import math

import numpy as np
import pytest

from dflsim.aggregation import (
    AggregationContext,
    AggregatorSpec,
    aggregate,
    aggregate_self_inclusive,
    aggregate_with_info,
    balance_accepts,
)


def ctx_for(own, received, t=0, total=300, alpha=0.5, malicious=None, eval_loss=None):
    return AggregationContext(
        own=np.asarray(own, dtype=float),
        received=[(i, np.asarray(v, dtype=float)) for i, v in received],
        round=t,
        total_rounds=total,
        alpha=alpha,
        self_id=99,
        malicious_count=malicious,
        eval_loss=eval_loss,
    )


def spec_for(rule, **kw):
    return AggregatorSpec(rule=rule, **kw)


# --- balance acceptance ------------------------------------------------

def test_balance_accepts_own_model_always():
    ctx = ctx_for([3.0, 4.0], [])
    assert balance_accepts(spec_for("balance"), ctx, np.array([3.0, 4.0]))


def test_balance_accept_reject_worked_example():
    # own (3,4): threshold at t=0 is 0.3 * 5 = 1.5
    ctx = ctx_for([3.0, 4.0], [])
    spec = spec_for("balance", gamma=0.3, kappa=1.0)
    assert balance_accepts(spec, ctx, np.array([3.0, 4.5]))      # dist 0.5
    assert not balance_accepts(spec, ctx, np.array([30.0, 40.0]))  # dist 45


def test_balance_threshold_decays_with_round():
    spec = spec_for("balance", gamma=0.3, kappa=1.0)
    own = [3.0, 4.0]
    w = np.array([3.0, 4.0 + 1.4])
    assert balance_accepts(spec, ctx_for(own, [], t=0), w)
    assert not balance_accepts(spec, ctx_for(own, [], t=299, total=300), w)


def test_balance_threshold_monotone_in_round():
    spec = spec_for("balance", gamma=0.3, kappa=2.0)
    own = np.array([3.0, 4.0])
    thresholds = [
        0.3 * math.exp(-2.0 * t / 100) * 5.0 for t in range(100)
    ]
    assert all(a >= b for a, b in zip(thresholds, thresholds[1:]))
    boundary = [
        balance_accepts(spec, ctx_for(own, [], t=t, total=100), own + np.array([0.0, thr * (1 - 1e-12)]))
        for t, thr in enumerate(thresholds)
    ]
    assert all(boundary)  # displacements inside the threshold are accepted at every round


# --- worked examples ---------------------------------------------------

def test_median_per_coordinate():
    out = aggregate(
        spec_for("median"),
        ctx_for([0.0, 0.0], [(1, [1.0, 5.0]), (2, [2.0, 4.0]), (3, [3.0, 0.0])], alpha=0.0),
    )
    assert out == pytest.approx([2.0, 4.0])


def test_trim_mean_worked_example():
    received = [(i, [v]) for i, v in enumerate([1.0, 2.0, 3.0, 4.0, 5.0])]
    out = aggregate(
        spec_for("trim_mean", malicious_count_mode="oracle"),
        ctx_for([0.0], received, alpha=0.0, malicious=1),
    )
    assert out == pytest.approx([3.0])


def test_mixing_worked_example():
    out = aggregate(
        spec_for("fedavg"),
        ctx_for([2.0, 2.0], [(1, [0.0, 0.0])], alpha=0.5),
    )
    assert out == pytest.approx([1.0, 1.0])


def test_fedavg_is_mean_of_received():
    out = aggregate(
        spec_for("fedavg"),
        ctx_for([9.0], [(1, [1.0]), (2, [2.0]), (3, [6.0])], alpha=0.0),
    )
    assert out == pytest.approx([3.0])


# --- brute force oracles ------------------------------------------------

def _krum_oracle(vectors, k_nearest):
    best, best_score = None, None
    for i, v in enumerate(vectors):
        dists = sorted(sum((v - u) ** 2) for j, u in enumerate(vectors) if j != i)
        score = sum(dists[:k_nearest])
        if best_score is None or score < best_score - 1e-12:
            best, best_score = i, score
    return best


def test_krum_matches_brute_force_oracle():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        k = int(rng.integers(3, 6))
        d = int(rng.integers(1, 4))
        vectors = [rng.normal(size=d) for _ in range(k)]
        received = [(i, v) for i, v in enumerate(vectors)]
        trim = int(rng.integers(0, max(1, k - 3) + 1))
        spec = spec_for("krum", malicious_count_mode="oracle")
        ctx = ctx_for(np.zeros(d), received, alpha=0.0, malicious=trim)
        out = aggregate(spec, ctx)
        k_nearest = max(1, k - trim - 2)
        assert np.array_equal(out, vectors[_krum_oracle(vectors, k_nearest)])


def test_median_and_trim_match_oracles():
    rng = np.random.default_rng(9)
    for _ in range(1000):
        k = int(rng.integers(2, 6))
        d = int(rng.integers(1, 4))
        vectors = [rng.normal(size=d) for _ in range(k)]
        received = [(i, v) for i, v in enumerate(vectors)]
        med = aggregate(spec_for("median"), ctx_for(np.zeros(d), received, alpha=0.0))
        want_med = [float(np.median([v[j] for v in vectors])) for j in range(d)]
        assert med == pytest.approx(want_med)
        trim = int(rng.integers(0, (k - 1) // 2 + 1))
        out = aggregate(
            spec_for("trim_mean", malicious_count_mode="oracle"),
            ctx_for(np.zeros(d), received, alpha=0.0, malicious=trim),
        )
        want = []
        for j in range(d):
            col = sorted(v[j] for v in vectors)
            kept = col[trim:len(col) - trim]
            want.append(sum(kept) / len(kept))
        assert out == pytest.approx(want)


# --- rule-specific behavior ---------------------------------------------

def test_krum_output_is_a_received_vector():
    rng = np.random.default_rng(10)
    received = [(i, rng.normal(size=3)) for i in range(7)]
    out = aggregate(spec_for("krum"), ctx_for(np.zeros(3), received, alpha=0.0))
    assert any(np.array_equal(out, v) for _, v in received)


def test_krum_tie_breaks_to_lowest_sender_id():
    v = np.array([1.0, 1.0])
    received = [(5, v.copy()), (2, v.copy()), (9, v.copy())]
    spec = spec_for("krum", malicious_count_mode="oracle")
    out, info = aggregate_with_info(spec, ctx_for(np.zeros(2), received, alpha=0.0, malicious=0))
    assert np.array_equal(out, v)
    assert info.accepted == 1


def test_fltrust_rescales_and_drops_negative_cosine():
    own = np.array([2.0, 0.0])
    received = [(1, np.array([4.0, 0.0])), (2, np.array([-1.0, 0.0]))]
    out = aggregate(spec_for("fltrust"), ctx_for(own, received, alpha=0.0))
    # only the positive-cosine model survives, rescaled to own norm
    assert out == pytest.approx([2.0, 0.0])


def test_fltrust_all_negative_falls_back_to_own():
    own = np.array([2.0, 0.0])
    received = [(1, np.array([-4.0, 0.0]))]
    out, info = aggregate_with_info(spec_for("fltrust"), ctx_for(own, received, alpha=0.5))
    assert np.array_equal(out, own)
    assert info.fallback


def test_scclip_limits_displacement():
    own = np.array([3.0, 4.0])  # norm 5
    received = [(1, np.array([3.0, 104.0]))]  # distance 100 -> clipped to 5
    out = aggregate(spec_for("scclip"), ctx_for(own, received, alpha=0.0))
    assert np.linalg.norm(out - own) == pytest.approx(5.0)


def test_scclip_keeps_nearby_models():
    own = np.array([3.0, 4.0])
    near = np.array([3.0, 4.5])
    out = aggregate(spec_for("scclip"), ctx_for(own, [(1, near)], alpha=0.0))
    assert out == pytest.approx(near)


def test_ubar_two_stage_filtering():
    own = np.array([0.0])
    # eval loss equals |w|: models farther from 0 lose stage 2
    def eval_loss(w):
        return float(abs(w[0]))

    received = [(1, np.array([0.1])), (2, np.array([-0.2])), (3, np.array([50.0]))]
    spec = spec_for("ubar", malicious_count_mode="oracle")
    ctx = ctx_for(own, received, alpha=0.0, malicious=1, eval_loss=eval_loss)
    out, info = aggregate_with_info(spec, ctx)
    # stage 1 keeps the 2 closest (0.1, -0.2); own loss 0 beats both,
    # so stage 2 empties and the loss minimizer (0.1) survives
    assert out == pytest.approx([0.1])
    assert info.accepted == 1


def test_ubar_stage2_keeps_better_models():
    own = np.array([1.0])

    def eval_loss(w):
        return float(abs(w[0]))

    received = [(1, np.array([0.5])), (2, np.array([0.9])), (3, np.array([2.0]))]
    spec = spec_for("ubar", malicious_count_mode="oracle")
    ctx = ctx_for(own, received, alpha=0.0, malicious=1, eval_loss=eval_loss)
    out = aggregate(spec, ctx)
    assert out == pytest.approx([0.7])  # mean of 0.5 and 0.9


def test_balance_empty_acceptance_falls_back_to_own():
    own = np.array([3.0, 4.0])
    received = [(1, np.array([300.0, 400.0]))]
    out, info = aggregate_with_info(spec_for("balance"), ctx_for(own, received, alpha=0.5))
    assert np.array_equal(out, own)
    assert info.fallback


def test_balance_variant1_static_threshold():
    own = np.array([3.0, 4.0])
    w = own + np.array([0.0, 1.4])
    spec = spec_for("balance_variant1", gamma=0.3)
    out_late = aggregate(spec, ctx_for(own, [(1, w)], t=299, alpha=0.0))
    assert out_late == pytest.approx(w)  # no decay: still accepted late


def test_balance_variant2_median_gate():
    own = np.zeros(1)
    received = [(1, np.array([0.0])), (2, np.array([0.1])), (3, np.array([50.0]))]
    spec = spec_for("balance_variant2", gamma=10.0)
    out = aggregate(spec, ctx_for(own, received, alpha=0.0))
    # q = (0, 0.1, 50) against own norm 0 -> only exact matches survive
    assert out == pytest.approx([0.0])


# --- shared invariants ---------------------------------------------------

ALL_COMBINE_RULES = [
    "fedavg", "krum", "trim_mean", "median", "fltrust", "ubar", "scclip",
    "balance", "balance_variant1", "balance_variant2",
]


@pytest.mark.parametrize("rule", ALL_COMBINE_RULES)
def test_permutation_invariance(rule):
    rng = np.random.default_rng(12)
    own = rng.normal(size=3)
    received = [(i, own + rng.normal(scale=0.05, size=3)) for i in range(6)]
    spec = spec_for(rule)
    eval_loss = (lambda w: float(np.linalg.norm(w))) if rule == "ubar" else None
    base = aggregate(spec, ctx_for(own, received, alpha=0.5, malicious=1, eval_loss=eval_loss))
    for perm in itertools.islice(itertools.permutations(received), 10):
        out = aggregate(spec, ctx_for(own, list(perm), alpha=0.5, malicious=1, eval_loss=eval_loss))
        assert out == pytest.approx(base, abs=1e-12)


@pytest.mark.parametrize("rule", ALL_COMBINE_RULES)
def test_identical_models_are_a_fixed_point(rule):
    v = np.array([3.0, -7.0, 11.0])  # integer-valued so means are exact
    received = [(i, v.copy()) for i in range(1, 6)]
    eval_loss = (lambda w: float(np.linalg.norm(w))) if rule == "ubar" else None
    out = aggregate(
        spec_for(rule),
        ctx_for(v, received, alpha=0.5, malicious=1, eval_loss=eval_loss),
    )
    assert np.array_equal(out, v)


@pytest.mark.parametrize("rule", ["fedavg", "trim_mean", "median", "balance"])
def test_convex_hull_containment(rule):
    rng = np.random.default_rng(13)
    own = rng.normal(size=4)
    received = [(i, own + rng.normal(scale=0.01, size=4)) for i in range(5)]
    mat = np.stack([v for _, v in received])
    out = aggregate(spec_for(rule), ctx_for(own, received, alpha=0.0, malicious=1))
    assert np.all(out >= mat.min(axis=0) - 1e-12)
    assert np.all(out <= mat.max(axis=0) + 1e-12)


def test_mixing_lands_on_own_to_agg_segment():
    rng = np.random.default_rng(14)
    own = rng.normal(size=3)
    received = [(i, own + rng.normal(scale=0.01, size=3)) for i in range(4)]
    spec = spec_for("balance")
    agg = aggregate(spec, ctx_for(own, received, alpha=0.0))
    for alpha in (0.0, 0.3, 0.5, 1.0):
        out = aggregate(spec, ctx_for(own, received, alpha=alpha))
        assert out == pytest.approx(alpha * own + (1 - alpha) * agg, abs=1e-12)


def test_scclip_output_stays_within_own_norm_ball():
    rng = np.random.default_rng(15)
    own = rng.normal(size=5)
    received = [(i, rng.normal(scale=100.0, size=5)) for i in range(6)]
    out = aggregate(spec_for("scclip"), ctx_for(own, received, alpha=0.0))
    assert np.linalg.norm(out - own) <= np.linalg.norm(own) + 1e-9


# --- self-inclusive mode --------------------------------------------------

def test_self_inclusive_fedavg_pools_own():
    out = aggregate_self_inclusive(
        spec_for("fedavg"),
        ctx_for([2.0, 2.0], [(1, [0.0, 0.0])]),
    )
    assert out == pytest.approx([1.0, 1.0])


def test_self_inclusive_median_elementwise_middle():
    out = aggregate_self_inclusive(
        spec_for("median"),
        ctx_for([1.0, 9.0], [(1, [2.0, 7.0]), (2, [3.0, 8.0])]),
    )
    assert out == pytest.approx([2.0, 8.0])


def test_self_inclusive_balance_always_accepts_own():
    own = np.array([3.0, 4.0])
    received = [(1, np.array([300.0, 400.0]))]
    out, info = __import__("dflsim.aggregation", fromlist=["x"]).aggregate_self_inclusive_with_info(
        spec_for("balance"), ctx_for(own, received)
    )
    assert np.array_equal(out, own)
    assert info.accepted == 1 and not info.fallback


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        aggregate(spec_for("fedavg"), ctx_for([1.0, 2.0], [(1, [1.0])]))
