import csv

import numpy as np
import pytest

from nomadmm.model import example_codebook, encode_slot
from nomadmm.solvers import (
    AdmmConfig,
    AdmmState,
    DivergenceError,
    admm_group_lasso,
    admm_prior_aided,
    admm_sparse_group_lasso,
    augmented_lagrangian,
    check_rho_conditions,
    factorize,
    infer_block_size,
    objective,
    residuals,
    solve_batch,
    stopping_thresholds,
    update_weights,
    write_trace,
    x_update_g,
    x_update_sg,
)

from conftest import crandn, random_system
from oracles import dense_solve, lagrangian_bruteforce, pg_objective, proximal_gradient


def _state(n=8, K=4, **kw):
    z = np.zeros(n, complex)
    base = dict(x=z.copy(), z=z.copy(), q=z.copy(), u1=z.copy(), u2=z.copy(),
                w_group=np.ones(n // K), w_elem=np.ones(n), t=1, z_prev=z.copy(), q_prev=z.copy())
    base.update(kw)
    return AdmmState(**base)


def test_config_validation():
    with pytest.raises(ValueError):
        AdmmConfig(rho=0)
    with pytest.raises(ValueError):
        AdmmConfig(T=0)
    with pytest.raises(ValueError):
        AdmmConfig(eps_w=0)
    with pytest.raises(ValueError):
        AdmmConfig(reweight="never")
    assert AdmmConfig().with_(rho=3.0).rho == 3.0


def test_x_update_sg_special_cases(rng):
    z, q, u1, u2 = (crandn(rng, 8) for _ in range(4))
    H0 = np.zeros((4, 8))
    np.testing.assert_allclose(x_update_sg(H0, np.zeros(4), z, q, u1, u2, 0.7), (z + q - u1 - u2) / 2)
    Q, _ = np.linalg.qr(crandn(rng, 8, 8))
    r = crandn(rng, 8)
    zero = np.zeros(8)
    np.testing.assert_allclose(x_update_sg(Q, r, zero, zero, zero, zero, 0.5), Q.conj().T @ r / 2)


def test_x_update_g_special_cases(rng):
    z, u, beta = (crandn(rng, 8) for _ in range(3))
    H0 = np.zeros((4, 8))
    np.testing.assert_allclose(x_update_g(H0, np.zeros(4), z, u, 1.3), z - u)
    zero = np.zeros(8)
    out = x_update_g(H0, np.zeros(4), zero, zero, 1.0, mu=1e9, beta_prior=beta)
    np.testing.assert_allclose(out, beta, rtol=1e-8)


def test_x_updates_match_dense_solve(rng):
    for _ in range(20):
        H = random_system(rng)
        r, z, q, u1, u2, beta = (crandn(rng, n) for n in (8, 32, 32, 32, 32, 32))
        rho, mu = rng.uniform(0.1, 5), rng.uniform(0, 2)
        A = H.conj().T @ H
        want = dense_solve(A + 2 * rho * np.eye(32), H.conj().T @ r + rho * (z + q - u1 - u2))
        got = x_update_sg(H, r, z, q, u1, u2, rho)
        assert np.linalg.norm(got - want) <= 1e-10 * np.linalg.norm(want)
        want = dense_solve(A + (mu + rho) * np.eye(32), H.conj().T @ r + mu * beta + rho * (z - u1))
        got = x_update_g(H, r, z, u1, rho, mu, beta, factor=factorize(H, mu + rho))
        assert np.linalg.norm(got - want) <= 1e-10 * np.linalg.norm(want)


def test_cached_factor_shift_checked(rng):
    H = random_system(rng)
    zero = np.zeros(32)
    with pytest.raises(ValueError):
        x_update_g(H, np.zeros(8), zero, zero, 1.0, factor=factorize(H, 2.0))


def test_update_weights():
    x = np.zeros(8, complex)
    x[4] = 1.0
    wg, we = update_weights(x, 4, 1e-6)
    assert wg[0] == pytest.approx(1e6)
    assert wg[1] == pytest.approx(1 / (1 + 1e-6))
    assert we[4] == pytest.approx(1 / (1 + 1e-6)) and we[0] == pytest.approx(1e6)
    norms = np.linspace(0, 3, 20)
    assert np.all(np.diff(1 / (norms + 1e-6)) < 0)


def test_residuals_hand_built():
    x = np.zeros(8, complex)
    x[:2] = [3, 4]
    rp, rd = residuals(_state(x=x), rho=2.0)
    assert rp == 5.0 and rd == 0.0
    s = _state(z=np.ones(8, complex), x=np.ones(8, complex))
    assert residuals(s, 2.0) == (0.0, 2.0 * np.sqrt(8))
    with pytest.raises(ValueError):
        residuals(_state(t=0), 1.0)


def test_stopping_thresholds():
    x, z, u = np.zeros(16), np.full(16, 2.0), np.full(16, 0.5)
    pri, dual = stopping_thresholds(x, z, u, 2.0, 1e-4, 1e-2)
    assert pri == pytest.approx(4e-4 + 1e-2 * 8)
    assert dual == pytest.approx(4e-4 + 1e-2 * 4)


def test_lagrangian_special_cases(rng):
    H = random_system(rng)
    r = crandn(rng, 8)
    cfg = AdmmConfig(alpha1=0.3, rho=2.0)
    x = crandn(rng, 32)
    s = _state(n=32, x=x, z=x.copy())
    want = 0.5 * np.linalg.norm(r - H @ x) ** 2 + 0.3 * np.sum(np.linalg.norm(x.reshape(8, 4), axis=1))
    assert augmented_lagrangian(s, H, r, cfg) == pytest.approx(want, rel=1e-12)
    assert augmented_lagrangian(_state(n=32), H, np.zeros(8), cfg) == 0.0


def test_lagrangian_matches_bruteforce(rng):
    for _ in range(10):
        H = random_system(rng)
        r, x, z, u = (crandn(rng, n) for n in (8, 32, 32, 32))
        wg = rng.uniform(0.1, 3, 8)
        cfg = AdmmConfig(alpha1=rng.uniform(0, 1), rho=rng.uniform(0.5, 5))
        s = _state(n=32, x=x, z=z, u1=u, w_group=wg)
        want = lagrangian_bruteforce(H, r, x, z, u, cfg.rho, cfg.alpha1, wg, 4)
        assert abs(augmented_lagrangian(s, H, r, cfg) - want) <= 1e-10 * max(1, abs(want))


def test_rho_conditions():
    H = np.eye(4)
    c = check_rho_conditions(H, 2.0)
    assert c.positive and c.curvature and c.dominance and c.all_met
    c = check_rho_conditions(H, 1.0)
    assert not c.dominance and not c.all_met
    # 1 * (1 + 1) == 2 * 1: curvature holds with equality
    assert c.curvature and c.boundary


def test_rho_conditions_eigen_oracle(rng):
    for _ in range(10):
        H = random_system(rng)
        ev = np.linalg.eigvals(H.conj().T @ H).real
        lmin, lmax = max(ev.min(), 0.0), ev.max()
        rho = rng.uniform(0.5, 3) * lmax
        c = check_rho_conditions(H, rho)
        assert c.lambda_max == pytest.approx(lmax, rel=1e-10)
        assert abs(c.lambda_min - lmin) < 1e-9 * lmax
        assert c.curvature == (rho * (rho + lmin) >= 2 * lmax**2)
        assert c.dominance == (rho > lmax)


def test_infer_block_size(rng):
    assert infer_block_size(random_system(rng, J=6, K=3, N_r=2)) == 3
    assert infer_block_size(random_system(rng)) == 4


@pytest.mark.parametrize("solver", [admm_group_lasso, admm_sparse_group_lasso])
def test_zero_observation_gives_zero(rng, solver):
    H = random_system(rng)
    cfg = AdmmConfig(alpha1=0.1, alpha2=0.05)
    state, report = solver(np.zeros(8), H, cfg)
    assert np.linalg.norm(state.x) < 1e-6
    assert report.converged


def test_group_without_penalty_reaches_ridge_fixed_point(rng):
    H = random_system(rng)
    r = crandn(rng, 8)
    cfg = AdmmConfig(alpha1=0.0, rho=2.0, T=5000, eps_abs=1e-12, eps_rel=1e-12, T_w=1)
    state, _ = admm_group_lasso(r, H, cfg)
    # with no penalty the iteration is x <- (A + rho I)^-1 (H^H r + rho x)
    A = H.conj().T @ H
    fixed = dense_solve(A + cfg.rho * np.eye(32), H.conj().T @ r + cfg.rho * state.x)
    assert np.linalg.norm(fixed - state.x) < 1e-6
    assert np.linalg.norm(H.conj().T @ (r - H @ state.x)) < 1e-6


def _single_user_instances(rng, cb, n):
    Hs = np.stack([random_system(rng) for _ in range(n)])
    users = rng.integers(8, size=n)
    xs = np.stack([encode_slot({int(j)}, {int(j): int(rng.integers(cb.M))}, cb) for j in users])
    return Hs, users, np.einsum("bmn,bn->bm", Hs, xs)


@pytest.mark.parametrize("variant,kind", [("sparse-group", "sparse"), ("group", "dense")])
def test_noiseless_single_user_largest_block(rng, variant, kind):
    Hs, users, r = _single_user_instances(rng, example_codebook(kind), 100)
    cfg = AdmmConfig(alpha2=0.01 if variant == "sparse-group" else 0.0)
    sol = solve_batch(variant, r, Hs, cfg, 4)
    hits = np.sum(np.argmax(np.linalg.norm(sol.x.reshape(100, 8, 4), axis=-1), axis=1) == users)
    assert hits >= 99


def test_single_user_misses_are_minimizer_properties(rng):
    # where the largest block is wrong, an independent solver lands on the same point
    Hs, users, r = _single_user_instances(rng, example_codebook("dense"), 100)
    cfg = AdmmConfig(T_w=1, T=3000, eps_abs=1e-7, eps_rel=1e-6)
    sol = solve_batch("group", r, Hs, cfg, 4)
    norms = np.linalg.norm(sol.x.reshape(100, 8, 4), axis=-1)
    missed = np.flatnonzero(norms.argmax(1) != users)
    assert missed.size > 0
    for b in missed[:3]:
        ref = proximal_gradient(Hs[b], r[b], 4, cfg.alpha1, np.ones(8), iters=20_000)
        np.testing.assert_allclose(norms[b], np.linalg.norm(ref.reshape(8, 4), axis=1), atol=1e-3)


@pytest.mark.parametrize("variant", ["group", "sparse-group"])
def test_tiny_instance_matches_proximal_gradient(rng, variant):
    J, K = 3, 2
    H = random_system(rng, J=J, K=K, N_r=1)
    r = crandn(rng, K)
    wg, we = rng.uniform(0.5, 2, J), rng.uniform(0.5, 2, J * K)
    a2 = 0.1 if variant == "sparse-group" else 0.0
    cfg = AdmmConfig(alpha1=0.2, alpha2=a2, rho=1.0, T=20_000, eps_abs=1e-8, eps_rel=1e-8)
    sol = solve_batch(variant, r, H, cfg, K, weights=wg, elem_weights=we)
    ref = proximal_gradient(H, r, K, 0.2, wg, a2, we, iters=20_000)
    f_admm = pg_objective(sol.x[0], H, r, K, 0.2, wg, a2, we)
    f_ref = pg_objective(ref, H, r, K, 0.2, wg, a2, we)
    assert abs(f_admm - f_ref) < 1e-3


def test_objective_variants(rng):
    H = random_system(rng)
    r, x = crandn(rng, 8), crandn(rng, 32)
    cfg = AdmmConfig(alpha1=0.3, alpha2=0.2, mu=0.5)
    wg, we = np.ones(8), np.ones(32)
    g = objective(x, H, r, cfg, wg)
    sg = objective(x, H, r, cfg, wg, we, variant="sparse-group")
    assert sg == pytest.approx(g + 0.2 * np.sum(np.abs(x)))
    beta = np.zeros(32)
    p = objective(x, H, r, cfg, wg, variant="prior", w_prior=np.ones(8), beta=beta)
    assert p == pytest.approx(g + 0.25 * np.sum(np.abs(x) ** 2))


def test_prior_reduces_to_group_iterate_for_iterate(rng):
    H = random_system(rng)
    r = crandn(rng, 8)
    cfg = AdmmConfig(mu=0.0, alpha1=0.1)
    sg, rg = admm_group_lasso(r, H, cfg)
    sp, rp = admm_prior_aided(r, H, cfg)
    assert rg.iterations_used == rp.iterations_used
    np.testing.assert_array_equal(sg.x, sp.x)
    np.testing.assert_array_equal(sg.history["primal"], sp.history["primal"])


def test_sparse_group_without_elementwise_penalty_matches_group_minimizer(rng):
    J, K = 3, 2
    H = random_system(rng, J=J, K=K, N_r=1)
    r = crandn(rng, K)
    wg = rng.uniform(0.5, 2, J)
    cfg = AdmmConfig(alpha1=0.2, alpha2=0.0, T=5000, eps_abs=1e-9, eps_rel=1e-9)
    a = solve_batch("group", r, H, cfg, K, weights=wg)
    b = solve_batch("sparse-group", r, H, cfg, K, weights=wg)
    fa = pg_objective(a.x[0], H, r, K, 0.2, wg)
    fb = pg_objective(b.x[0], H, r, K, 0.2, wg)
    assert abs(fa - fb) < 1e-6


def test_prior_trusted_users_not_shrunk(rng):
    cb = example_codebook("dense")
    H = random_system(rng)
    x = encode_slot({1, 6}, {1: 0, 6: 2}, cb)
    r = H @ x
    state, _ = admm_prior_aided(r, H, AdmmConfig(alpha1=5.0, mu=0.0), q_set={1})
    norms = np.linalg.norm(state.z.reshape(8, 4), axis=1)
    assert norms[1] > 0
    assert state.w_prior[1] == 0.0


def test_prior_validates_beta(rng):
    H = random_system(rng)
    beta = np.zeros(32, complex)
    beta[8] = 1.0
    with pytest.raises(ValueError):
        admm_prior_aided(np.zeros(8), H, AdmmConfig(), q_set={0}, beta_prior=beta)
    with pytest.raises(ValueError):
        admm_prior_aided(np.zeros(8), H, AdmmConfig(), q_set={9})


def test_prior_with_truth_improves_support(rng):
    cb = example_codebook("dense")
    B = 1000
    from nomadmm.model import assemble_channel_matrix, draw_channel

    Hs = np.stack([assemble_channel_matrix(draw_channel(8, 2, 4, rng)) for _ in range(B)])
    xs, q = np.zeros((B, 32), complex), np.zeros((B, 8), bool)
    truth = np.zeros((B, 8), bool)
    for b in range(B):
        sup = rng.choice(8, 2, replace=False)
        xs[b] = encode_slot(set(sup.tolist()), {int(j): int(rng.integers(4)) for j in sup}, cb)
        truth[b, sup] = True
        q[b, sup[0]] = True
    r = np.einsum("bmn,bn->bm", Hs, xs) + 0.1 * crandn(rng, B, 8)
    beta = xs * np.repeat(q, 4, axis=1)
    cfg = AdmmConfig()
    g = solve_batch("group", r, Hs, cfg, 4)
    p = solve_batch("prior", r, Hs, cfg.with_(mu=1.0), 4, w_prior=1.0 - q, beta=beta)

    def errors(sol):
        norms = np.linalg.norm(sol.x.reshape(B, 8, 4), axis=-1)
        top = np.argsort(-norms, axis=1, kind="stable")[:, :2]
        est = np.zeros_like(truth)
        np.put_along_axis(est, top, True, axis=1)
        return np.sum(np.any(est != truth, axis=1))

    assert errors(p) <= errors(g)


def test_divergence_reported(rng):
    H = random_system(rng)
    r = np.full(8, 1e308, complex)
    with pytest.raises(DivergenceError), np.errstate(all="ignore"):
        admm_group_lasso(r, H, AdmmConfig())


def test_batch_matches_single(rng):
    Hs = np.stack([random_system(rng) for _ in range(4)])
    r = crandn(rng, 4, 8)
    sol = solve_batch("group", r, Hs, AdmmConfig(), 4)
    for b in range(4):
        state, report = admm_group_lasso(r[b], Hs[b], AdmmConfig())
        np.testing.assert_allclose(sol.x[b], state.x, atol=1e-12)
        assert report.iterations_used == sol.iterations[b]


def test_report_and_history_lengths(rng):
    H = random_system(rng)
    state, report = admm_group_lasso(crandn(rng, 8), H, AdmmConfig(T=40))
    assert report.iterations_used == state.t <= 40
    for key in ("primal", "dual", "lagrangian", "objective"):
        assert state.history[key].shape == (state.t,)


def test_rounds_schedule_runs(rng):
    H = random_system(rng)
    state, report = admm_group_lasso(crandn(rng, 8), H, AdmmConfig(reweight="rounds", T_w=3))
    assert 1 <= report.rounds_used <= 3


def test_write_trace(rng, tmp_path):
    H = random_system(rng)
    state, _ = admm_group_lasso(crandn(rng, 8), H, AdmmConfig())
    write_trace(state, tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "r_p", "r_d", "L", "objective"]
    assert len(rows) == state.t + 1
    assert float(rows[1][1]) == state.history["primal"][0]
