import numpy as np
import pytest

from nomadmm.detect import DetectorConfig, detect
from nomadmm.dynamic import (
    CASE_LABELS,
    SlotEstimate,
    classify_batch,
    classify_case,
    detect_frames,
    prior_signal,
    prior_weights,
    quality_set,
    step_i,
    step_i_batch,
    step_ii,
    step_ii_batch,
)
from nomadmm.harness import draw_trials
from nomadmm.model import SystemConfig, example_codebook
from nomadmm.solvers import solve_batch

CB = example_codebook("dense")
CFG = DetectorConfig(alpha_fsj=0.7)


def _frames(n, snr_db=None, **system):
    data = draw_trials(SystemConfig(**system), CB, 0, n)
    r = np.einsum("blmn,bln->blm", data.H, data.x) if snr_db is None else data.observe(snr_db)
    return data, r


def _est(users, syms):
    return SlotEstimate(frozenset(users), np.zeros(32, complex), dict(zip(users, syms)))


def test_classify_case_examples():
    assert classify_case([_est([0, 1], [0, 0]), _est([2, 3], [0, 0])]) == "Case1"
    assert classify_case([_est([0, 1], [0, 0]), _est([1, 3], [1, 0])]) == "Case2a"
    assert classify_case([_est([0, 1], [0, 2]), _est([1, 3], [2, 0])]) == "Case2b"
    # two different users sharing a codeword index do not make a repeat
    assert classify_case([_est([0, 1], [0, 3]), _est([1, 2], [1, 3])]) == "Case2a"
    assert classify_case([_est([0], [0])]) == "Case1"


def test_classify_mixed_frame_takes_most_informative_label():
    ests = [_est([0, 1], [0, 0]), _est([2, 3], [1, 1]), _est([3, 4], [1, 0])]
    assert classify_case(ests) == "Case2b"
    mask = np.zeros((1, 3, 8), bool)
    sym = np.zeros((1, 3, 8), int)
    for l, e in enumerate(ests):
        for j, m in e.symbol_idx.items():
            mask[0, l, j], sym[0, l, j] = True, m
    assert CASE_LABELS[classify_batch(mask, sym)[0]] == "Case2b"


def test_quality_set():
    assert quality_set({1, 3}, {3, 5}) == {3}
    assert quality_set({1}, {2}) == frozenset()
    assert quality_set({1, 2}, {1, 2}) == {1, 2}
    assert quality_set(None, {1}) == frozenset()


def test_prior_weights():
    np.testing.assert_array_equal(prior_weights(set(), 4), [1, 1, 1, 1])
    np.testing.assert_array_equal(prior_weights(range(4), 4), [0, 0, 0, 0])
    np.testing.assert_array_equal(prior_weights({1}, 4), [1, 0, 1, 1])


def test_prior_signal(rng):
    x = rng.standard_normal(16) + 1j * rng.standard_normal(16)
    np.testing.assert_array_equal(prior_signal(x, set(), 4), 0)
    np.testing.assert_array_equal(prior_signal(x, range(4), 4), x)
    b = prior_signal(x, {0, 2}, 4)
    energy = np.sum(np.abs(x[0:4]) ** 2) + np.sum(np.abs(x[8:12]) ** 2)
    assert np.isclose(np.sum(np.abs(b) ** 2), energy)


def test_step_i_single_slot_equals_one_shot():
    data, r = _frames(20, snr_db=10.0, L=1)
    mask, x_p, _, s_hat, _, _ = step_i_batch(r, data.H, CFG, CB)
    one = detect(r[:, 0], data.H[:, 0], CFG, 4)
    np.testing.assert_array_equal(mask[:, 0], one.mask)
    np.testing.assert_array_equal(x_p[:, 0], one.x_hat)
    np.testing.assert_array_equal(s_hat[:, 0], one.sparsity_hat)


def test_step_i_slot_order_irrelevant():
    data, r = _frames(10, snr_db=10.0, L=4, activity_mode="dynamic-case1")
    a = step_i_batch(r, data.H, CFG, CB)
    perm = [2, 0, 3, 1]
    b = step_i_batch(r[:, perm], data.H[:, perm], CFG, CB)
    np.testing.assert_array_equal(a[0][:, perm], b[0])
    np.testing.assert_array_equal(a[1][:, perm], b[1])


def test_step_i_static_noiseless():
    data, r = _frames(100, L=4)
    mask = step_i_batch(r, data.H, CFG, CB)[0]
    hits = np.sum(np.all(mask == data.mask, axis=(1, 2)))
    assert hits >= 99


def test_step_i_single_frame_wrapper():
    data, r = _frames(1, snr_db=10.0, L=3)
    ests = step_i(r[0], data.H[0, 0], CFG, CB)
    mask = step_i_batch(r, data.H, CFG, CB)[0]
    for l, e in enumerate(ests):
        assert e.support_p == frozenset(np.flatnonzero(mask[0, l]).tolist())
        assert set(e.symbol_idx) == e.support_p
        assert np.all(e.x_p.reshape(8, 4)[~mask[0, l]] == 0)


def test_case1_frames_keep_step_i():
    data, r = _frames(20, snr_db=8.0, L=5, activity_mode="dynamic-case1")
    est = detect_frames(r, data.H, CFG, CB, mode="case1")
    np.testing.assert_array_equal(est.final_mask, est.prelim_mask)
    np.testing.assert_array_equal(est.final_x, est.prelim_x)
    assert not est.quality_mask.any()


def test_single_slot_frames_never_reach_step_ii():
    data, r = _frames(10, snr_db=8.0, L=1)
    est = detect_frames(r, data.H, CFG, CB, mode="case2b")
    assert np.all(est.labels == 0)
    np.testing.assert_array_equal(est.final_mask, est.prelim_mask)


@pytest.mark.parametrize("mode", ["case2a", "case2b"])
def test_quality_set_invariants(mode):
    data, r = _frames(50, snr_db=6.0, L=7, activity_mode="dynamic-" + mode, p_stay=0.8)
    est = detect_frames(r, data.H, CFG, CB, mode=mode)
    q, fin, pre = est.quality_mask, est.final_mask, est.prelim_mask
    assert not q[:, 0].any()
    assert np.all(q[:, 1:] <= fin[:, :-1])
    assert np.all(q <= pre)
    beta = est.prior_x.reshape(50, 7, 8, 4)
    assert np.all(beta[~q] == 0)


def test_first_slot_case2a_equals_step_i_solve():
    data, r = _frames(20, snr_db=6.0, L=3, activity_mode="dynamic-case2a")
    est = detect_frames(r, data.H, CFG, CB, mode="case2a")
    np.testing.assert_array_equal(est.final_mask[:, 0], est.prelim_mask[:, 0])
    np.testing.assert_allclose(est.final_x[:, 0], est.prelim_x[:, 0], atol=1e-12)


def test_trusted_users_carry_zero_penalty():
    data, r = _frames(5, snr_db=10.0, L=3, activity_mode="dynamic-case2b", p_stay=1.0)
    est = detect_frames(r, data.H, CFG, CB, mode="case2b")
    l = 2
    q = est.quality_mask[:, l]
    sol = solve_batch("prior", r[:, l], data.H[:, l], CFG.solver, 4, w_prior=1.0 - q, beta=est.prior_x[:, l])
    assert np.all(sol.w_prior[q] == 0)


def test_step_ii_perfect_prior_keeps_support():
    n, L = 100, 5
    data, r = _frames(n, L=L, activity_mode="dynamic-case2b", p_stay=1.0)
    prelim = (data.mask.copy(), data.x.copy(), data.sym.copy(), data.mask.sum(-1),
              np.zeros((n, L), int), np.zeros((n, L), bool))
    est = step_ii_batch(r, data.H, CFG, CB, prelim, np.full(n, 2))
    same = np.all(est.final_mask == data.mask, axis=(1, 2))
    assert same.sum() >= 99


def test_step_ii_case2a_not_worse_than_step_i():
    data, r = _frames(1000, snr_db=10.0, L=7, activity_mode="dynamic-case2a", p_stay=0.8)
    est = detect_frames(r, data.H, CFG, CB, mode="case2a")
    err_i = np.sum(np.any(est.prelim_mask != data.mask, axis=-1))
    err_ii = np.sum(np.any(est.final_mask != data.mask, axis=-1))
    assert err_ii <= err_i


def test_step_ii_single_frame_wrapper():
    data, r = _frames(1, snr_db=10.0, L=4, activity_mode="dynamic-case2b", p_stay=1.0)
    ests = step_i(r[0], data.H[0, 0], CFG, CB)
    fe = step_ii(r[0], data.H[0, 0], CFG, CB, ests)
    assert fe.case_label == classify_case(ests)
    assert len(fe.final_supports) == 4 and fe.quality_sets[0] == frozenset()


def test_mode_validation():
    data, r = _frames(1, L=2)
    with pytest.raises(ValueError):
        detect_frames(r, data.H, CFG, CB, mode="case3")
