import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sysid_clt import diagnostics as dg
from sysid_clt.errors import SingularGramError
from sysid_clt.gramians import compute_gramians
from sysid_clt.model import NoiseModel, ProblemInstance, batch_from_noise, derive_rng, simulate_batch
from sysid_clt.presets import build_preset

from conftest import random_stable


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def test_phi():
    assert dg.phi(0.5) == 0.5 and dg.phi(2.0) == 4.0


def test_decompose_hand_example():
    inst = ProblemInstance(np.array([[2.0]]), NoiseModel.gaussian(np.eye(1)))
    # x1 = 1, x2 = 3 -> w1 = 3 - 2 = 1
    batch = batch_from_noise(inst, np.array([1.0, 1.0]).reshape(1, 2, 1))
    np.testing.assert_allclose(batch.states[0, :, 0], [1.0, 3.0])
    rep = dg.decompose(batch, inst, compute_gramians(inst, 1))
    assert rep.q_hat[0, 0] == pytest.approx(1.0)
    assert rep.sigma_hat[0, 0] == pytest.approx(1.0)
    assert rep.delta[0, 0] == pytest.approx(1.0)
    assert rep.decomposition_residual <= 1e-15


def test_decompose_singular():
    inst = build_preset("zero", 4)
    with pytest.raises(SingularGramError):
        dg.decompose(simulate_batch(inst, 1, 2, seed=0), inst, compute_gramians(inst, 2))


def test_decompose_sigma_tilde_only_when_stable():
    rw = build_preset("random-walk", 2)
    rep = dg.decompose(simulate_batch(rw, 2, 20, seed=0), rw, compute_gramians(rw, 20))
    assert rep.sigma_tilde_kappa is None
    st_inst = build_preset("isotropic-stable", 2)
    rep = dg.decompose(simulate_batch(st_inst, 2, 20, seed=0), st_inst, compute_gramians(st_inst, 20))
    assert rep.sigma_tilde_kappa is not None
    with pytest.raises(ValueError):
        dg.decompose(simulate_batch(rw, 2, 20, seed=0), rw, compute_gramians(rw, 20), normalizer="gamma_kappa")


def test_iso_error_shrinks_for_iid_vectors():
    inst = build_preset("zero", 4)
    g = compute_gramians(inst, 1)
    means = []
    for m in (100, 1600):
        errs = [dg.isometry_error(simulate_batch(inst, m, 1, seed=1, replicate=(m, r)), g.gamma_T) for r in range(50)]
        means.append(np.mean(errs))
    # sqrt(d / m) scaling: a factor 4 reduction
    assert 2.5 <= means[0] / means[1] <= 6.0


def test_martingale_index_maps():
    inst = build_preset("scalar-stable", 2)
    batch = simulate_batch(inst, 1, 2, seed=3)
    g = compute_gramians(inst, 2)
    seq = dg.martingale_increments(batch, inst, g)
    assert seq.increments.shape == (2, 2, 2)
    g_inv = np.linalg.inv(g.gamma_T)
    for j in range(2):
        expect = np.outer(batch.noises[0, j], g_inv @ batch.states[0, j]) / 2
        np.testing.assert_allclose(seq.increments[j], expect, rtol=1e-13)
    batch = simulate_batch(inst, 3, 4, seed=3)
    seq = dg.martingale_increments(batch, inst, compute_gramians(inst, 4))
    j = np.arange(1, 13)
    np.testing.assert_array_equal(seq.i_index, (j - 1) // 4 + 1)
    np.testing.assert_array_equal(seq.t_index, (j - 1) % 4 + 1)


def test_martingale_conditional_mean_vanishes():
    inst = build_preset("isotropic-stable", 2)
    g = compute_gramians(inst, 3)
    batch = simulate_batch(inst, 1, 3, seed=0)
    x = batch.states[0, 1]
    g_inv = np.linalg.inv(g.gamma_T)
    n = 10_000
    rng = derive_rng(0, 77)
    w = rng.standard_normal((n, 2)) @ inst.noise.sqrt_cov.T
    incs = np.einsum("na,b->nab", w, g_inv @ x) / 3
    mean = incs.mean(axis=0)
    se = incs.std(axis=0, ddof=1) / math.sqrt(n)
    assert np.all(np.abs(mean) <= 5 * se)


def test_quadratic_variation_scalar():
    inst = ProblemInstance(np.array([[0.7]]), NoiseModel.gaussian(np.array([[1.7]])))
    g = compute_gramians(inst, 6)
    batch = simulate_batch(inst, 2, 6, seed=5)
    res = dg.quadratic_variation_identities(batch, inst, g)
    assert res["residual_col"] <= 1e-13 and res["residual_row"] <= 1e-13


@pytest.mark.parametrize("preset,d", [("isotropic-stable", 4), ("random-walk", 3), ("frob-gap", 5)])
def test_quadratic_variation_identities(preset, d):
    inst = build_preset(preset, d)
    batch = simulate_batch(inst, 2, 30, seed=11)
    res = dg.quadratic_variation_identities(batch, inst, compute_gramians(inst, 30))
    assert max(res.values()) <= 1e-10


def test_block_toeplitz_scalar_by_hand():
    a, s2 = 0.4, 2.0
    inst = ProblemInstance(np.array([[a]]), NoiseModel.gaussian(np.array([[s2]])))
    g = compute_gramians(inst, 2)
    gam = g.gamma_T[0, 0]
    l_t = dg.block_toeplitz_matrix(inst, g.gamma_T, 2)
    np.testing.assert_allclose(l_t, gam**-0.5 * math.sqrt(s2) * np.array([[1.0, 0.0], [a, 1.0]]), rtol=1e-14)
    batch = simulate_batch(inst, 1, 2, seed=2)
    res = dg.block_toeplitz_quadratic_form(batch, inst, g, np.array([1.0]))
    assert res["residual"] <= 1e-13
    assert res["trace_q"] == pytest.approx(1.0, rel=1e-12)


def test_block_toeplitz_random_vectors():
    rng = np.random.default_rng(8)
    inst = random_stable(rng, 3)
    g = compute_gramians(inst, 10)
    batch = simulate_batch(inst, 2, 10, seed=8)
    l_t = dg.block_toeplitz_matrix(inst, g.gamma_T, 10)
    worst = max(dg.block_toeplitz_quadratic_form(batch, inst, g, _unit(rng, 3), l_t)["residual"] for _ in range(20))
    assert worst <= 1e-9
    with pytest.raises(ValueError):
        dg.block_toeplitz_quadratic_form(batch, inst, g, np.array([1.0, 1.0, 0.0]))


def test_block_toeplitz_expectation_is_one():
    inst = build_preset("isotropic-stable", 2)
    T = 5
    g = compute_gramians(inst, T)
    l_t = dg.block_toeplitz_matrix(inst, g.gamma_T, T)
    v = np.array([0.6, 0.8])
    big = simulate_batch(inst, 10_000, T, seed=21)
    # each trajectory is one batch with m = 1
    vals = []
    for i in range(big.m):
        sub = type(big)(states=big.states[i:i + 1], noises=big.noises[i:i + 1])
        vals.append(dg.block_toeplitz_quadratic_form(sub, inst, g, v, l_t)["rhs"])
    vals = np.array(vals)
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - 1.0) <= 3 * se


def test_sigma_bar_is_unbiased():
    inst = build_preset("isotropic-stable", 3)
    T = 20
    g = compute_gramians(inst, T)
    bars = []
    for r in range(2000):
        rep = dg.decompose(simulate_batch(inst, 1, T, seed=4, replicate=r), inst, g, ps=(2,))
        bars.append(rep.sigma_bar)
    bars = np.array(bars)
    se = bars.std(axis=0, ddof=1) / math.sqrt(len(bars))
    assert np.all(np.abs(bars.mean(axis=0) - np.eye(3)) <= 5 * se)


def test_t1_closed_form_in_expectation():
    inst = random_stable(np.random.default_rng(2), 3, radius=0.6)
    m, T, N = 2, 25, 2000
    g = compute_gramians(inst, T)
    g_inv = np.linalg.inv(g.gamma_T)
    vals = []
    for r in range(N):
        b = simulate_batch(inst, m, T, seed=9, replicate=r)
        q = b.w.T @ b.x / (m * T)
        vals.append(m * T * np.sum((q @ g_inv) ** 2))
    vals = np.array(vals)
    target = np.trace(inst.sigma_w) * np.trace(g_inv)
    assert abs(vals.mean() - target) <= 5 * vals.std(ddof=1) / math.sqrt(N)


def test_small_ball_chi_square():
    inst = build_preset("zero", 1)
    rows = dg.small_ball_probe(inst, 1, [0.0, 0.01, 0.1], N=200_000, seed=3, v_count=1)
    probs = {r["eps"]: r["probability"] for r in rows}
    assert probs[0.0] == 0.0
    exact = 2 * NormalDist().cdf(math.sqrt(0.01)) - 1
    assert exact == pytest.approx(0.0797, abs=1e-4)
    assert probs[0.01] == pytest.approx(exact, abs=4 * math.sqrt(exact / 200_000))
    assert all(r["probability"] <= r["envelope"] for r in rows if r["eps"] > 0)
    with pytest.raises(ValueError):
        dg.small_ball_probe(inst, 1, [0.1], N=10)


def test_small_ball_log_concave_envelope():
    inst = build_preset("isotropic-stable", 3, family="uniform-ball")
    rows = dg.small_ball_probe(inst, 5, [0.01, 0.05, 0.2], N=5000, seed=1, c=4.0, alpha=0.5)
    assert all(r["probability"] <= r["envelope"] + 3 * r["stderr"] for r in rows)


def test_chevet_examples():
    res = dg.chevet_oracle(np.array([[1.0]]), np.array([[1.0]]), N=20_000, seed=0)
    assert res["lower_env"] == 1.0 and res["upper_env"] == 16.0
    assert res["mc_mean"] == pytest.approx(1.0, abs=4 * res["stderr"])
    d = 16
    res = dg.chevet_oracle(np.eye(d), np.eye(d), N=500, seed=1)
    assert 2 * d <= res["mc_mean"] <= 16 * d
    # Gordon: E sigma_max(G) <= 2 sqrt(d); the edge correction is O(d^{-1/6})
    assert 3 * d <= res["mc_mean"] <= 4 * d + 4
    u = np.zeros((5, 5))
    u[0, 0] = 2.0
    res = dg.chevet_oracle(u, np.eye(5), N=4000, seed=2)
    # rank one: ||A G B||^2 = 4 ||row of G||^2, mean 20 = ||A||^2 ||B||_F^2
    assert res["mc_mean"] == pytest.approx(20.0, abs=5 * res["stderr"])
    assert res["mc_mean"] >= res["lower_env"]


def test_burkholder_probe_reports():
    inst = build_preset("zero", 8)
    g = compute_gramians(inst, 4)
    small = dg.burkholder_probe(inst, g, 40, 4, N=100, seed=0)
    big = dg.burkholder_probe(inst, g, 160, 4, N=100, seed=0)
    assert small["ratio"] <= 1.0
    assert big["lhs"] < small["lhs"]
    with pytest.warns(UserWarning):
        dg.burkholder_probe(build_preset("zero", 3), compute_gramians(build_preset("zero", 3), 4), 10, 4, N=5)


def test_burkholder_homogeneity():
    base = build_preset("zero", 8)
    scaled = build_preset("zero", 8, sigma=3.0)
    # D_j = w (Gamma^{-1} x)^T / mT: w scales by 3, Gamma^{-1} x scales by 1/3 -> terms invariant
    r1 = dg.burkholder_probe(base, compute_gramians(base, 3), 20, 3, N=30, seed=4)
    r2 = dg.burkholder_probe(scaled, compute_gramians(scaled, 3), 20, 3, N=30, seed=4)
    for k in ("lhs", "term_col", "term_row", "term_schatten"):
        assert r2[k] == pytest.approx(r1[k], rel=1e-10)


def test_isometry_probe_table():
    inst = build_preset("isotropic-stable", 2)
    rows = dg.isometry_probe(inst, [1, 4], [50], r=2, N=40, seed=0)
    assert [(r["m"], r["T"]) for r in rows] == [(1, 50), (4, 50)]
    assert rows[1]["moment"] < rows[0]["moment"]
    assert all(r["stderr"] >= 0 and r["envelope"] > 0 for r in rows)
    with pytest.raises(ValueError):
        dg.isometry_probe(inst, [1], [10], r=0.5)


def test_t2_split_probe():
    inst = build_preset("isotropic-stable", 3)
    g = compute_gramians(inst, 100)
    res = dg.t2_split_probe(inst, g, 1, 100, N=20, seed=0)
    assert 0 <= res["t2"] <= res["bound"]


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 4), m=st.integers(1, 3), T=st.integers(4, 25),
       unit_root=st.booleans())
def test_pathwise_identities_property(seed, d, m, T, unit_root):
    rng = np.random.default_rng(seed)
    inst = build_preset("random-walk", d) if unit_root else random_stable(rng, d)
    g = compute_gramians(inst, T)
    batch = simulate_batch(inst, m, T, seed)
    try:
        rep = dg.decompose(batch, inst, g)
    except SingularGramError:
        return
    assert rep.decomposition_residual <= 1e-9
    for q in (0.1, 1.0, 10.0):
        assert rep.basic_inequality_holds(q)
    for p in rep.t2_sample:
        assert rep.t2_split_holds(p)
    qv = dg.quadratic_variation_identities(batch, inst, g)
    assert max(qv.values()) <= 1e-9
    res = dg.block_toeplitz_quadratic_form(batch, inst, g, _unit(rng, d))
    assert res["residual"] <= 1e-9
    assert res["trace_q"] == pytest.approx(1.0, rel=1e-9)
