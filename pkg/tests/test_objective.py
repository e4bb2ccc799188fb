import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mupo.config import GroupPartition
from mupo.objective import (
    AdvantageSet,
    SurrogateInputs,
    clipped_surrogate,
    group_coefficients,
    grpo_advantages,
    grpo_objective,
    load_balance_weight,
    mupo_advantages,
    mupo_objective,
    surrogate_logratio_grad,
)

rewards_st = arrays(float, st.integers(2, 20), elements=st.floats(-10, 10, allow_nan=False))


@pytest.mark.parametrize("rewards,expected", [
    ([1, 0], [1, -1]),
    ([1, 1, 1], [0, 0, 0]),
    ([1, 1, 0, 0], [1, 1, -1, -1]),
])
def test_grpo_advantage_examples(rewards, expected):
    np.testing.assert_allclose(grpo_advantages(rewards).values, expected, atol=1e-12)


def test_floor_rule_is_counted():
    assert grpo_advantages([1, 1, 1]).std_floor_hits == 1
    assert grpo_advantages([1, 0]).std_floor_hits == 0


def test_grpo_needs_two_rewards():
    with pytest.raises(ValueError):
        grpo_advantages([1.0])


def test_sample_std_option():
    np.testing.assert_allclose(grpo_advantages([1, 0], ddof=1).values,
                               [1 / np.sqrt(2), -1 / np.sqrt(2)], atol=1e-12)


@settings(max_examples=200)
@given(rewards_st)
def test_advantage_moments(r):
    adv = grpo_advantages(r)
    if adv.std_floor_hits == 0:
        assert abs(adv.values.mean()) < 1e-9
        assert abs(adv.values.std() - 1) < 1e-9
    else:
        assert np.all(adv.values == 0)


@settings(max_examples=200)
@given(rewards_st, st.floats(-100, 100), st.floats(0.01, 100))
def test_advantage_shift_and_scale_invariance(r, c, scale):
    base = grpo_advantages(r)
    shifted = grpo_advantages(r + c)
    if base.std_floor_hits == 0 and shifted.std_floor_hits == 0:
        np.testing.assert_allclose(shifted.values, base.values, atol=1e-6)
    scaled = grpo_advantages(r * scale)
    if base.std_floor_hits == 0 and scaled.std_floor_hits == 0:
        np.testing.assert_allclose(scaled.values, base.values, atol=1e-9)


@pytest.mark.parametrize("N,K,size,beta,expected", [
    (15, 3, 5, 1.0, 1.0),
    (15, 3, 3, 1.0, 5 / 3),
    (15, 3, 3, 0.0, 1.0),
    (7, 2, 4, 0.0, 1.0),
])
def test_load_balance_weight(N, K, size, beta, expected):
    assert load_balance_weight(N, K, size, beta) == pytest.approx(expected, abs=1e-12)


def test_group_local_examples():
    part = GroupPartition.from_labels([0, 0, 1, 1])
    np.testing.assert_allclose(mupo_advantages([1, 0, 1, 0], part).values, [1, -1, 1, -1], atol=1e-12)
    adv = mupo_advantages([1, 1, 1, 0], part)
    np.testing.assert_allclose(adv.values, [0, 0, 1, -1], atol=1e-12)
    assert adv.std_floor_hits == 1


def test_single_group_matches_grpo():
    r = np.array([0.3, 2.0, 1.1, -0.4, 0.0])
    np.testing.assert_array_equal(mupo_advantages(r, GroupPartition.single(5)).values,
                                  grpo_advantages(r).values)


def test_global_scope_ignores_partition():
    r = np.array([1.0, 0.0, 2.0, 0.5])
    adv = mupo_advantages(r, GroupPartition.from_labels([0, 0, 1, 1]), scope="global")
    np.testing.assert_array_equal(adv.values, grpo_advantages(r).values)


def test_singleton_group_rejected():
    with pytest.raises(ValueError, match="singleton group 1"):
        mupo_advantages([1, 0, 1], GroupPartition.from_labels([0, 0, 1]))


@pytest.mark.parametrize("ratio,adv,expected", [
    (1.0, 3.7, 3.7),
    (1.0, -2.0, -2.0),
    (1.5, 2.0, 2.4),
    (0.5, -1.0, -0.8),
])
def test_clipped_surrogate_examples(ratio, adv, expected):
    assert clipped_surrogate(ratio, adv, 0.2) == pytest.approx(expected, abs=1e-12)


@given(st.floats(1e-3, 10), st.floats(-10, 10), st.floats(0.01, 0.99))
def test_clipped_surrogate_bounded_by_unclipped(r, a, eps):
    assert clipped_surrogate(r, a, eps) <= r * a + 1e-12


@given(st.floats(0.05, 5), st.floats(-5, 5), st.floats(0.05, 0.5))
def test_logratio_grad_matches_finite_difference(r, a, eps):
    lo, hi = 1 - eps, 1 + eps
    if min(abs(r - lo), abs(r - hi)) < 1e-4:
        return  # kink
    h = 1e-6
    fd = (clipped_surrogate(r * np.exp(h), a, eps) - clipped_surrogate(r * np.exp(-h), a, eps)) / (2 * h)
    assert float(surrogate_logratio_grad(r, a, eps)) == pytest.approx(fd, abs=1e-6)


def _inputs(ratios, adv):
    return SurrogateInputs(ratios=list(ratios), advantages=AdvantageSet(np.asarray(adv, float), "global"))


def test_grpo_objective_examples():
    assert grpo_objective(_inputs([1, 1], [1, -1])) == 0.0
    assert grpo_objective(_inputs([1.5, 1], [1, -1])) == pytest.approx(0.1, abs=1e-12)


def test_surrogate_inputs_validation():
    with pytest.raises(ValueError):
        _inputs([1.0], [1.0, -1.0])
    with pytest.raises(ValueError):
        _inputs([0.0, 1.0], [1.0, -1.0])


def test_mupo_objective_single_group_equals_grpo():
    inputs = _inputs([1.3, 0.7, 1.0, 1.1], [0.5, -1.2, 0.3, 0.4])
    for beta in (0.0, 1.0, 2.5):
        assert mupo_objective(inputs, GroupPartition.single(4), beta) == grpo_objective(inputs)


def test_balanced_groups_independent_of_beta():
    inputs = _inputs([1.3, 0.7, 1.0, 1.1, 0.9, 1.25], [0.5, -1.2, 0.3, 0.4, -0.1, 1.0])
    part = GroupPartition.from_labels([0, 1, 2, 0, 1, 2])
    assert mupo_objective(inputs, part, 1.0) == pytest.approx(mupo_objective(inputs, part, 0.0), abs=1e-12)


def test_unbalanced_groups_compose_from_grpo():
    rng = np.random.default_rng(7)
    sizes = (3, 5, 7)
    labels = np.repeat([0, 1, 2], sizes)
    ratios = rng.uniform(0.6, 1.4, 15)
    adv = rng.normal(size=15)
    part = GroupPartition.from_labels(labels)
    weights = (5 / 3, 1.0, 5 / 7)
    expected = sum(
        w * grpo_objective(_inputs(ratios[labels == k], adv[labels == k]))
        for k, w in enumerate(weights)
    )
    assert mupo_objective(_inputs(ratios, adv), part, 1.0) == pytest.approx(expected, abs=1e-12)
    np.testing.assert_allclose(group_coefficients(part, 1.0),
                               [weights[g] / sizes[g] for g in labels], atol=1e-15)


def test_per_token_ratios_average_within_rollout():
    adv = AdvantageSet(np.array([1.0, -1.0]), "global")
    inputs = SurrogateInputs([np.array([1.5, 1.0]), np.array([1.0, 1.0])], adv, 0.2, [2, 2])
    # rollout 0: (min(1.5, 1.2) + 1.0) / 2 = 1.1; rollout 1: -1
    assert grpo_objective(inputs) == pytest.approx(0.05, abs=1e-12)


def test_mismatched_partition_rejected():
    adv = mupo_advantages([1, 0, 1, 0], GroupPartition.from_labels([0, 0, 1, 1]))
    inputs = SurrogateInputs([1.0] * 4, adv)
    with pytest.raises(ValueError):
        mupo_objective(inputs, GroupPartition.from_labels([0, 1, 0, 1]), 1.0)
