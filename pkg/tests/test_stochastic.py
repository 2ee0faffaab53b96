import json
import math

import jsonschema
import numpy as np
import pytest

from optpredict import klein_gordon as kg
from optpredict import op_core
from optpredict import stochastic as st
from optpredict.klein_gordon import KgParams, KgState


def system(n=2, r=1, sigma=1.0):
    return kg.build(KgParams(n, r, sigma))


def boundary_system(n, r, nu):
    return kg.build(KgParams(n, r, math.sqrt(kg.theorem_sigma2(n, nu))))


def test_rng_stream_deterministic():
    a = st.RngStream(5, 2).generator().standard_normal(8)
    b = st.RngStream(5, 2).generator().standard_normal(8)
    c = st.RngStream(5, 3).generator().standard_normal(8)
    d = st.RngStream(6, 2).generator().standard_normal(8)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_rng_child_streams():
    base = st.RngStream(9)
    assert base.child(4) == st.RngStream(9, 4)
    assert st.RngStream(9, 1).child(4) != base.child(4)


def test_rng_frozen_first_values():
    # Philox is counter based; these numbers must never change across platforms
    vals = st.RngStream(0, 0).generator().standard_normal(2)
    np.testing.assert_array_equal(vals, np.random.Generator(np.random.Philox(key=0)).standard_normal(2))


@pytest.mark.parametrize("threads", ["1", "3", "8"])
def test_map_samples_worker_invariant(monkeypatch, threads):
    def fn(i, stream):
        return stream.generator().standard_normal(3) + i

    monkeypatch.setenv("OPTPREDICT_THREADS", "1")
    ref = st.map_samples(fn, 1300, st.RngStream(1))
    monkeypatch.setenv("OPTPREDICT_THREADS", threads)
    assert np.array_equal(st.map_samples(fn, 1300, st.RngStream(1)), ref)


def test_worker_count_parsing(monkeypatch):
    monkeypatch.setenv("OPTPREDICT_THREADS", "junk")
    assert st.worker_count() == 1
    monkeypatch.setenv("OPTPREDICT_THREADS", "0")
    assert st.worker_count() == 1
    monkeypatch.setenv("OPTPREDICT_THREADS", "6")
    assert st.worker_count() == 6


def test_sample_prior_moments():
    sys = system(1, 1, 1.0)
    measure = st.GaussianMeasure(sys)

    def one(i, stream):
        s = measure.draw(stream.generator())
        return [np.sum((sys.omega * s.q) ** 2), sys.a_norm(s) ** 2]

    data = st.map_samples(one, 100_000, st.RngStream(3))
    size = sys.size
    for col, target in ((0, size), (1, 2 * size)):
        mean = data[:, col].mean()
        se = data[:, col].std(ddof=1) / math.sqrt(len(data))
        assert abs(mean - target) <= 5 * se


def test_sample_prior_deterministic():
    sys = system()
    a = st.sample_prior(st.GaussianMeasure(sys), st.RngStream(4, 1))
    b = st.sample_prior(st.GaussianMeasure(sys), st.RngStream(4, 1))
    assert np.array_equal(a.q, b.q) and np.array_equal(a.p, b.p)


def test_generic_measure_covariance():
    lin = op_core.random_invariant_system(3, 2)
    measure = st.GaussianMeasure(lin)
    x = st.map_samples(lambda i, s: measure.draw(s.generator()), 40_000, st.RngStream(5))
    cov = x.T @ x / len(x)
    ainv = np.linalg.inv(lin.a)
    assert np.abs(cov - ainv).max() <= 6 * np.sqrt(2.0 / len(x)) * np.abs(ainv).max()


def test_constraint_values_basic():
    sys = system(2, 1)
    zero = KgState(np.zeros(sys.size), np.zeros(sys.size))
    assert not st.constraint_values(sys, zero).any()
    a = st.sample_prior(st.GaussianMeasure(sys), st.RngStream(0, 1))
    b = st.sample_prior(st.GaussianMeasure(sys), st.RngStream(0, 2))
    np.testing.assert_allclose(
        st.constraint_values(sys, a + b), st.constraint_values(sys, a) + st.constraint_values(sys, b), atol=1e-14
    )


def test_constraint_values_aliased_sum():
    n, r, sigma = 2, 1, 0.9
    sys = system(n, r, sigma)
    npts = 2 * n + 1
    m = sys.m
    # single mode a_l = 1 (cosine of wavenumber l): complex coefficients c_{+-l} = 1/sqrt2
    for l in range(1, m + 1):
        q = np.zeros(sys.size)
        q[m - l] = 1.0
        c = {l: 1 / math.sqrt(2), -l: 1 / math.sqrt(2)}
        vq = []
        for xa in sys.x:
            tot = 0.0
            for k in range(-n, n + 1):
                w = math.sqrt(npts / (2 * np.pi)) * sum(
                    math.exp(-((k + j * npts) ** 2) * sigma**2 / 4) * c.get(k + j * npts, 0.0) for j in range(-r, r + 1)
                )
                tot += (np.exp(1j * k * xa) / math.sqrt(npts) * w).real
            vq.append(tot)
        got = st.constraint_values(sys, KgState(q, np.zeros(sys.size)))[:npts]
        np.testing.assert_allclose(got, vq, atol=1e-14)


def test_sample_conditional_constraints_and_mean():
    sys = system(1, 1, 1.0)
    v0 = st.constraint_values(sys, st.sample_prior(st.GaussianMeasure(sys), st.RngStream(11)))
    draws = st.map_samples(
        lambda i, s: st.sample_conditional(sys, v0, s).as_vector(), 100_000, st.RngStream(12)
    )
    g2 = sys.blocks().constraint_matrix()
    resid = np.abs(draws @ g2 - v0).max()
    assert resid <= 1e-10 * max(1.0, np.abs(v0).max())
    mean = draws.mean(axis=0)
    se = draws.std(axis=0, ddof=1) / math.sqrt(len(draws))
    target = sys.lift(v0).as_vector()
    assert np.all(np.abs(mean - target) <= 5 * se + 1e-14)


def test_sample_conditional_zero_data_energy():
    sys = system(1, 1, 1.0)
    v0 = np.zeros(sys.n_constraints)
    e = st.map_samples(
        lambda i, s: sys.a_norm(st.sample_conditional(sys, v0, s)) ** 2, 20_000, st.RngStream(13)
    )
    target = 2 * sys.size - st.trace_identity(sys)
    assert target == pytest.approx(2 * (2 * sys.m + 1) - 2 * (2 * sys.n + 1), rel=1e-10)
    assert abs(e.mean() - target) <= 5 * e.std(ddof=1) / math.sqrt(len(e))


@pytest.mark.parametrize("n", [1, 2, 3, 4])
@pytest.mark.parametrize("r", [0, 1, 2])
def test_trace_identity_exact(n, r):
    for s2 in (2.0, 8.0):
        sys = system(n, r, math.sqrt(s2 / (2 * n + 1)))
        assert st.trace_identity(sys) == pytest.approx(2 * (2 * n + 1), abs=1e-10)


@pytest.mark.parametrize("n,target", [(1, 6.0), (4, 18.0)])
def test_constraint_energy_targets(n, target):
    sys = system(n, 1, math.sqrt(4.0 / (2 * n + 1)))
    rep = st.verify_constraint_energy(sys, 4000, st.RngStream(2))
    assert rep.thresholds["target"] == target
    assert rep.estimate("trace_identity").value == pytest.approx(target, abs=1e-10)
    assert rep.verdict == st.PASS


def test_covariance_small_sample_inconclusive():
    rep = st.verify_covariance(system(2, 2, 1.0), 10, st.RngStream(1))
    assert rep.verdict == st.INCONCLUSIVE


def test_covariance_vp_diagonal_formula():
    sys = system(2, 1, 0.9)
    _, var_p = st.analytic_variances(sys.params)
    ell = np.arange(-sys.m, sys.m + 1)
    assert var_p == pytest.approx(np.sum(np.exp(-(ell**2) * 0.81 / 2)) / (2 * np.pi), rel=1e-14)
    _, c = sys.generic
    npts = sys.params.n_points
    np.testing.assert_allclose(np.diag(c.m_matrix)[npts:], var_p, rtol=1e-12)


@pytest.mark.parametrize("n,r,sigma", [(1, 0, 0.3), (2, 2, 1.0), (4, 3, 2.0), (8, 3, 0.1)])
def test_variance_window(n, r, sigma):
    var_q, _ = st.analytic_variances(KgParams(n, r, sigma))
    assert 1 / (2 * np.pi) < var_q < 1 / (2 * math.tanh(np.pi))


def test_theorem1_zero_time():
    rep = st.verify_theorem1(system(1, 1, 1.0), 0.5, 0.0, 200, st.RngStream(0))
    assert rep.estimate("prob_exceed[t=0]").value == 0.0
    assert rep.estimate("max_error[t=0]").value == 0.0


def test_theorem1_r0_exact():
    rep = st.verify_theorem1(boundary_system(2, 0, 0.5), 0.5, [1.0, 5.0], 200, st.RngStream(0))
    for t in ("1", "5"):
        assert rep.estimate(f"max_error[t={t}]").value <= 1e-10
        assert rep.estimate(f"prob_exceed[t={t}]").value == 0.0
    assert rep.verdict == st.PASS


def test_theorem1_example():
    sys = boundary_system(1, 1, 0.5)
    assert sys.params.sigma**2 == pytest.approx(6 * 1.5 * math.log(3) / 3, rel=1e-14)
    assert sys.params.sigma**2 == pytest.approx(3.296, abs=1e-3)
    rep = st.verify_theorem1(sys, 0.5, 1.0, 2000, st.RngStream(7))
    assert rep.thresholds["probability"] == pytest.approx(3**-0.5)
    assert rep.estimate("prob_exceed[t=1]").value <= 3**-0.5
    assert rep.estimate("lemma1_violations[t=1]").value == 0
    assert rep.verdict == st.PASS


def test_theorem1_rejects_bad_nu():
    with pytest.raises(ValueError):
        st.verify_theorem1(system(), 0.0, 1.0, 10, st.RngStream(0))


def test_theorem1_small_sample_inconclusive():
    rep = st.verify_theorem1(boundary_system(1, 1, 0.5), 0.5, 1.0, 50, st.RngStream(0))
    assert rep.verdict == st.INCONCLUSIVE


def test_theorem2_rmax_difference_zero():
    sys = {r: kg.build(KgParams(1, r, 1.2)) for r in (1, 3)}
    state = st.sample_prior(st.GaussianMeasure(sys[3]), st.RngStream(1))
    d = st.theorem2_differences(state, sys, [3], 3)
    assert d[0] == 0.0


def test_theorem2_paths_agree():
    sigma = math.sqrt(kg.theorem_sigma2(1, 0.0))
    systems = {r: kg.build(KgParams(1, r, sigma)) for r in (0, 1, 2, 3)}
    for i in range(5):
        state = st.sample_prior(st.GaussianMeasure(systems[3]), st.RngStream(2, i))
        closed = st.theorem2_differences(state, systems, [0, 1, 2], 3, path="closed")
        generic = st.theorem2_differences(state, systems, [0, 1, 2], 3, path="generic")
        np.testing.assert_allclose(closed, generic, rtol=0, atol=1e-9)
    with pytest.raises(ValueError):
        st.theorem2_differences(state, systems, [0], 3, path="other")


def test_theorem2_threshold_and_time_invariance():
    sigma = math.sqrt(kg.theorem_sigma2(1, 0.0))
    rep = st.verify_theorem2(1, sigma, 0.0, 3, 200, st.RngStream(4), r_values=[1], check_time=2.7)
    assert rep.thresholds["epsilon[r=1]"] == pytest.approx(0.016461, abs=5e-7)
    assert rep.estimate("max_time_deviation").value <= 1e-10
    assert rep.verdict == st.PASS


def test_theorem2_median_decreases_in_r():
    sigma = math.sqrt(kg.theorem_sigma2(1, 0.0))
    rep = st.verify_theorem2(1, sigma, 0.0, 4, 300, st.RngStream(0), r_values=[0, 1, 2, 3])
    med = [rep.estimate(f"median_diff[r={r}]").value for r in range(4)]
    assert all(a > b for a, b in zip(med, med[1:]))


def test_theorem2_argument_checks():
    with pytest.raises(ValueError):
        st.verify_theorem2(1, 1.0, -0.1, 2, 10, st.RngStream(0))
    with pytest.raises(ValueError):
        st.verify_theorem2(1, 1.0, 0.0, 2, 10, st.RngStream(0), r_values=[2])


def test_theorem2_unresolvable_is_inconclusive():
    # eps at r=1, n=4, nu=1 is far below the roundoff floor of the comparison
    sigma = math.sqrt(kg.theorem_sigma2(4, 1.0))
    rep = st.verify_theorem2(4, sigma, 1.0, 2, 120, st.RngStream(0), r_values=[1])
    assert rep.thresholds["resolvable[r=1]"] == 0
    assert rep.verdict == st.INCONCLUSIVE


def test_smooth_reconstructs_constrained_modes():
    sys = system(2, 2, 1.0)
    v = np.zeros(sys.n_constraints)
    v[1] = 1.0
    u = sys.lift(v)
    rep = st.smooth_data_experiment(sys, u.q, u.p, 3)
    assert rep.estimate("lhs").value <= 1e-12
    assert rep.verdict == st.PASS


def test_smooth_low_modes_no_tail():
    sys = system(2, 3, 1.0)
    k = kg.wavenumbers(sys.m)
    u0 = np.where(k <= 2, 1.0 / (1.0 + k**2), 0.0)
    rep = st.smooth_data_experiment(sys, u0, np.zeros(sys.size), 2)
    assert rep.estimate("rhs_tail_term").value == 0.0


def test_smooth_profile_reported():
    sys = system(2, 2, math.sqrt(kg.theorem_sigma2(2, 0.0)))
    u0, pi0 = st.smooth_profile(sys)
    rep = st.smooth_data_experiment(sys, u0, pi0, 3, nu=0.0)
    assert math.isfinite(rep.estimate("ratio").value)
    assert rep.estimate("constraint_residual").value <= rep.thresholds["constraint_residual_tol"]
    assert rep.verdict == st.PASS


def test_lowerbound_scan_trace_matches_sampling():
    sys = system(1, 1, 1.0)
    rep = st.lowerbound_scan(sys, [0.0, 2.0])
    assert rep.verdict == st.EXPLORATORY
    assert rep.estimate("expected_sq_error[t=0]").value == 0.0
    exact = rep.estimate("expected_sq_error[t=2]").value

    def one(i, s):
        v0 = s.generator().standard_normal(sys.n_constraints)
        return sys.a_norm(kg.kg_approx_mean(sys, v0, 2.0) - kg.kg_exact_mean(sys, v0, 2.0)) ** 2

    e = st.map_samples(one, 4000, st.RngStream(8))
    assert abs(e.mean() - exact) <= 5 * e.std(ddof=1) / math.sqrt(len(e))


def test_report_validation_and_schema():
    rep = st.verify_constraint_energy(system(1, 1, 1.0), 150, st.RngStream(0))
    doc = json.loads(rep.to_json())
    jsonschema.validate(doc, st.REPORT_SCHEMA)
    assert doc["verdict"] in st.VERDICTS
    bad = st.ExperimentReport("x", {}, verdict=st.PASS)
    bad.add("prob_thing", 1.5)
    with pytest.raises(ValueError):
        bad.to_json()
    nan = st.ExperimentReport("x", {}, verdict=st.PASS)
    nan.add("value", float("nan"))
    with pytest.raises(ValueError):
        nan.to_json()


def test_combine_verdicts():
    assert st.combine_verdicts([st.PASS, st.PASS]) == st.PASS
    assert st.combine_verdicts([st.PASS, st.INCONCLUSIVE]) == st.INCONCLUSIVE
    assert st.combine_verdicts([st.INCONCLUSIVE, st.FAIL]) == st.FAIL


def test_reports_independent_of_threads(monkeypatch):
    sys = boundary_system(1, 1, 0.5)
    monkeypatch.setenv("OPTPREDICT_THREADS", "1")
    a = st.verify_theorem1(sys, 0.5, [1.0], 1500, st.RngStream(3)).to_json()
    monkeypatch.setenv("OPTPREDICT_THREADS", "4")
    b = st.verify_theorem1(sys, 0.5, [1.0], 1500, st.RngStream(3)).to_json()
    assert a == b
