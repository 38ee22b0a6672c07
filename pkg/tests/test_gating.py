import numpy as np
import pytest

from moe_offload.core import DomainError, LayerProfile, ModelSpec
from moe_offload.gating import (
    GatingThreshold,
    calibrate_threshold,
    decide_all,
    fixed_top_k,
    gate_decide_score_baseline,
    gate_decide_sensitivity,
    normalized_top1_share,
    perturbation_matrix,
    profile_single_prob,
    sensitivity_perturbation,
    single_ratio,
)

from conftest import make_token

SPEC = ModelSpec(1, 4, 2, 4)


def test_top1_share_examples():
    assert normalized_top1_share([0.4, 0.4, 0.2, 0.0]) == pytest.approx(0.5)
    assert normalized_top1_share([1.0, 0.0, 0.0, 0.0]) == 1.0
    assert normalized_top1_share([0.6, 0.3, 0.1, 0.0]) == pytest.approx(2 / 3)


def test_top1_share_needs_two_experts():
    with pytest.raises(DomainError):
        normalized_top1_share([1.0])


def test_perturbation_examples():
    assert sensitivity_perturbation(1.0, 123.0) == 0.0
    assert sensitivity_perturbation(0.7, 0.0) == 0.0
    assert sensitivity_perturbation(0.8, 10.0) == pytest.approx(0.4)


def test_one_hot_is_always_single():
    d = gate_decide_sensitivity([0.0, 1.0, 0.0, 0.0], LayerProfile(0, 0, 5.0), 0.0, SPEC)
    assert d.single and d.selected == (1,)


def test_tau_zero_keeps_top2():
    spec = ModelSpec(1, 2, 2, 4)
    d = gate_decide_sensitivity([0.6, 0.4], LayerProfile(0, 0, 1.0), GatingThreshold(0.0), spec)
    assert not d.single and d.selected == (0, 1)
    assert d.perturbation == pytest.approx(0.16)


def test_threshold_boundary_is_inclusive():
    scores = [0.9, 0.1, 0.0, 0.0]
    prof = LayerProfile(0, 0, 5.0)
    p = sensitivity_perturbation(normalized_top1_share(scores), 5.0)
    assert p == pytest.approx(0.05)
    assert gate_decide_sensitivity(scores, prof, 0.05, SPEC).single
    # equality itself counts as single
    assert gate_decide_sensitivity(scores, prof, p, SPEC).single
    assert not gate_decide_sensitivity(scores, prof, np.nextafter(p, 0.0), SPEC).single


def test_score_baseline():
    s = [0.6, 0.3, 0.1, 0.0]
    assert gate_decide_score_baseline([0.3, 0.3, 0.2, 0.2], 0.5, SPEC).single
    assert not gate_decide_score_baseline(s, 1.0, SPEC).single
    assert gate_decide_score_baseline(s, 0.6, SPEC).single
    with pytest.raises(DomainError):
        gate_decide_score_baseline(s, 0.4, SPEC)


def test_fixed_top_k_never_single():
    assert fixed_top_k([0.97, 0.01, 0.01, 0.01], SPEC).selected == (0, 1)


def test_single_selection_is_top1_of_topk():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s = rng.dirichlet(np.ones(4))
        d = gate_decide_sensitivity(s.tolist(), LayerProfile(0, 0, 1.0), 0.05, SPEC)
        full = fixed_top_k(s.tolist(), SPEC).selected
        assert d.selected == full[: len(d.selected)]


def test_monotone_in_tau():
    rng = np.random.default_rng(1)
    prof = LayerProfile(0, 0, 2.0)
    for _ in range(50):
        s = rng.dirichlet(np.ones(4)).tolist()
        lo = gate_decide_sensitivity(s, prof, 0.01, SPEC).single
        hi = gate_decide_sensitivity(s, prof, 0.1, SPEC).single
        assert hi or not lo


def test_vectorised_matches_scalar():
    rng = np.random.default_rng(2)
    scores = rng.dirichlet(np.ones(8), size=(30, 3))
    fisher = [0.5, 1.0, 3.0]
    mat = perturbation_matrix(scores, fisher)
    for j in range(30):
        for li in range(3):
            a = normalized_top1_share(scores[j, li].tolist())
            assert mat[j, li] == sensitivity_perturbation(a, fisher[li])


def test_calibrate_known_multiset():
    toks = [make_token(j, [[a, 1 - a, 0.0, 0.0]]) for j, a in enumerate([0.9, 0.85, 0.8, 0.75])]
    profiles = [LayerProfile(0, 0, 1.0)]
    pert = sorted(sensitivity_perturbation(a, 1.0) for a in [0.9, 0.85, 0.8, 0.75])
    tau = calibrate_threshold(toks, profiles, 0.5).tau
    assert tau == pert[1]
    assert single_ratio(toks, profiles, tau) == 0.5


def test_calibrate_multiset_from_fisher():
    # alpha = 0.5 everywhere, so each layer's perturbation is fisher / 4
    values = [0.1, 0.2, 0.3, 0.4]
    traces = [make_token(0, [[0.5, 0.5, 0.0, 0.0]] * 4)]
    profiles = [LayerProfile(0, 0, 4 * v) for v in values]
    assert calibrate_threshold(traces, profiles, 0.5).tau == pytest.approx(0.2)


def test_calibrate_boundaries():
    rng = np.random.default_rng(4)
    toks = [make_token(j, [rng.dirichlet(np.ones(4)).tolist()]) for j in range(50)]
    profiles = [LayerProfile(0, 0, 1.0)]
    assert calibrate_threshold(toks, profiles, 0.0).tau == 0.0
    top = calibrate_threshold(toks, profiles, 1.0).tau
    all_p = [sensitivity_perturbation(normalized_top1_share(t.layers[0].gate.scores), 1.0) for t in toks]
    assert top == max(all_p)
    assert single_ratio(toks, profiles, top) == 1.0


def test_calibrate_reaches_target_minimally():
    rng = np.random.default_rng(5)
    toks = [make_token(j, [rng.dirichlet(np.ones(4)).tolist()] * 2) for j in range(100)]
    profiles = [LayerProfile(0, 0, 1.0), LayerProfile(0, 0, 3.0)]
    for target in (0.1, 0.24, 0.5, 0.77):
        tau = calibrate_threshold(toks, profiles, target).tau
        assert single_ratio(toks, profiles, tau) >= target
        assert single_ratio(toks, profiles, np.nextafter(tau, -1.0)) < target


def test_profile_single_prob():
    spec = ModelSpec(1, 4, 2, 4)
    single = gate_decide_sensitivity([1.0, 0, 0, 0], LayerProfile(0, 0, 1.0), 0.0, spec)
    double = gate_decide_sensitivity([0.5, 0.5, 0, 0], LayerProfile(0, 0, 1.0), 0.0, spec)
    assert profile_single_prob([[single] * 3]) == [1.0]
    assert profile_single_prob([[double] * 3]) == [0.0]
    assert profile_single_prob([[single] * 24 + [double] * 76]) == [pytest.approx(0.24)]
    with pytest.raises(DomainError):
        profile_single_prob([[]])


def test_decide_all_layout(small_workload, small_spec):
    _, traces, _ = small_workload
    profiles = [LayerProfile(0, 0, 1.0)] * small_spec.num_layers
    dec = decide_all(traces, profiles, 0.05, small_spec)
    assert len(dec) == small_spec.num_layers and len(dec[0]) == len(traces)
    fixed = decide_all(traces, profiles, 0.05, small_spec, adaptive=False)
    assert all(len(d.selected) == 2 for layer in fixed for d in layer)
