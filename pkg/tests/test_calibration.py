import datetime as dt
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from oracles import direct_xcorr2, direct_xcorr3

from proplab.calibration import (
    LinearSystem,
    assemble,
    assemble_tim1,
    calibrate,
    calibrate_many,
    estimate,
    estimate_cim2,
    estimate_responses,
    smooth_kernel,
    solve_system,
)
from proplab.errors import InputError, SingularSystemError
from proplab.events import DaySeries, InstrumentData
from proplab.models import CalibratedModel, ModelKind
from proplab.synth import FlowSpec, generate, power_law_model


def make_data(rets, signs, labels):
    days = [
        DaySeries.from_returns(dt.date(2020, 1, 2 + i), s, lab, r)
        for i, (r, s, lab) in enumerate(zip(rets, signs, labels))
    ]
    return InstrumentData("T", days)


def random_data(seed, days=2, T=120):
    rng = np.random.default_rng(seed)
    signs = [rng.choice([-1, 1], T) for _ in range(days)]
    labels = [rng.integers(0, 2, T) for _ in range(days)]
    rets = [rng.normal(size=T) * lab for lab in labels]
    return make_data(rets, signs, labels)


def oracle_series(day):
    eps = day.sign.astype(float)
    ic = (day.label == 1).astype(float)
    return {"n": eps * (1 - ic), "c": eps * ic}, ic, day.ret


# --------------------------------------------------------------------------
# estimates


def test_responses_against_direct_sums():
    data = random_data(1, days=3, T=90)
    L = 6
    est = estimate(data, L, segment_length=90, three_point=False)
    for p in "nc":
        for q in "nc":
            want = np.mean([
                direct_xcorr2(oracle_series(d)[0][p], d.ret * (d.label == (q == "c")), L)
                for d in data.days
            ], axis=0)
            np.testing.assert_allclose(est.responses.S_pipi[p, q], want, rtol=1e-10, atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_chain_identity(seed):
    rs = estimate_responses(random_data(seed, days=2, T=60), 8)
    for p in "nc":
        np.testing.assert_allclose(rs.S_pi[p], rs.S_pipi[p, "n"] + rs.S_pipi[p, "c"], atol=1e-14)
    np.testing.assert_allclose(rs.S, rs.S_pi["n"] + rs.S_pi["c"], atol=1e-14)


def test_zero_returns_zero_responses():
    rng = np.random.default_rng(0)
    data = make_data([np.zeros(50)], [rng.choice([-1, 1], 50)], [np.zeros(50, int)])
    rs = estimate_responses(data, 5)
    assert np.all(rs.S == 0)


def test_cim2_same_lag_responses():
    data = generate(FlowSpec(T=2000, days=3, seed=2, sign_memory=0.7))
    est = estimate(data, 10, segment_length=2000, three_point=False)
    S = est.responses.S_pipi
    assert S["c", "c"][10] == pytest.approx(5e-5 * est.correlations.p_c, rel=1e-12)
    for key in (("n", "n"), ("n", "c"), ("c", "n")):
        assert abs(S[key][10]) < 1e-18


def test_lag_bound_checked():
    data = random_data(0, T=40)
    with pytest.raises(InputError):
        estimate(data, 40)
    with pytest.raises(InputError):
        estimate(data, 5, segment_length=4)


# --------------------------------------------------------------------------
# linear systems against loop oracles


def test_tim2_system_against_oracle():
    data = random_data(3, days=2, T=100)
    L = 5
    est = estimate(data, L, segment_length=100, three_point=False)
    sys_ = assemble("tim2", est)
    C = {}
    S = {}
    for p in "nc":
        for q in "nc":
            C[p, q] = np.mean([direct_xcorr2(oracle_series(d)[0][p], oracle_series(d)[0][q], L)
                               for d in data.days], axis=0)
        S[p] = np.mean([direct_xcorr2(oracle_series(d)[0][p], d.ret, L) for d in data.days], axis=0)
    k = np.arange(L + 1)
    M = np.block([[C[p, q][k[:, None] - k[None, :] + L] for q in "nc"] for p in "nc"])
    b = np.concatenate([S[p][k + L] for p in "nc"])
    np.testing.assert_allclose(sys_.matrix, M, rtol=1e-10, atol=1e-14)
    np.testing.assert_allclose(sys_.rhs, b, rtol=1e-10, atol=1e-14)
    kern, _ = solve_system(sys_)
    x = np.linalg.solve(M, b)
    np.testing.assert_allclose(np.concatenate([kern["g_n"], kern["g_c"]]), x, rtol=1e-7, atol=1e-10)


def test_hdim2_system_against_oracle():
    data = random_data(4, days=2, T=80)
    L = 4
    est = estimate(data, L, segment_length=80)
    sys_ = assemble("hdim2", est)
    blocks = {}
    rhs = {}
    k = np.arange(L + 1)
    for p in "nc":
        for q in "nc":
            vals = []
            for d in data.days:
                x, ic, _ = oracle_series(d)
                # < I_c(t) x_p(t - l) x_q(t - j) > = xcorr3(I_c, x_p, x_q)(-l, -j)
                vals.append(direct_xcorr3(ic, x[p], x[q], L))
            T3 = np.mean(vals, axis=0)
            blocks[p, q] = T3[np.ix_(L - k, L - k)]
        rhs[p] = np.mean([direct_xcorr2(oracle_series(d)[0][p], d.ret * (d.label == 1), L)
                          for d in data.days], axis=0)[k + L]
    M = np.block([[blocks[p, q] for q in "nc"] for p in "nc"])
    b = np.concatenate([rhs["n"], rhs["c"]])
    M[0, :] = 0
    M[0, 0] = 1
    b[0] = 0
    np.testing.assert_allclose(sys_.matrix, M, rtol=1e-9, atol=1e-14)
    np.testing.assert_allclose(sys_.rhs, b, rtol=1e-9, atol=1e-14)


def test_hdim2_star_factorised():
    data = random_data(5, days=2, T=200)
    est = estimate(data, 6)
    star = assemble("hdim2star", est).matrix
    C2 = est.correlations.C2
    pc = est.correlations.p_c
    n = 7
    # c block against c kernel: P(c) C_cc(l - j) except the coincident entry
    assert star[n, n] == pytest.approx(C2["c", "c"].at(0))
    assert star[n + 2, n + 1] == pytest.approx(pc * C2["c", "c"].at(1))
    assert star[n + 1, 3] == pytest.approx(pc * C2["c", "n"].at(-2))
    assert star[n, 0] == 0.0


def test_tim1_white_signs_identity():
    data = generate(FlowSpec(T=20_000, days=4, seed=3, change_prob="1"))
    est = estimate(data, 10, three_point=False)
    sys_ = assemble("tim1", est)
    np.testing.assert_allclose(sys_.matrix, np.eye(11), atol=0.02)
    kern, _ = solve_system(sys_)
    assert kern["g"][0] == pytest.approx(5e-5, rel=0.02)
    assert np.all(np.abs(kern["g"][1:]) < 0.03 * 5e-5)


def test_tim1_return_sign_variant():
    est = estimate(random_data(6, T=100), 5, three_point=False)
    a = assemble_tim1(est.responses, est.correlations.sign_autocorr(), matrix="return-sign")
    np.testing.assert_allclose(a.matrix[2, 0], est.responses.at(-2))
    np.testing.assert_allclose(a.matrix[0, 2], est.responses.at(2))
    with pytest.raises(InputError):
        assemble_tim1(est.responses, est.correlations.sign_autocorr(), matrix="other")


def test_constant_signs_singular():
    T = 200
    data = make_data([np.full(T, 1e-4)], [np.ones(T, int)], [np.ones(T, int)])
    with pytest.raises(SingularSystemError) as exc:
        calibrate(data, "tim1", 5)
    assert exc.value.condition > 1e15 or not np.isfinite(exc.value.condition)


def test_ridge_fallback_reported():
    M = np.diag([1.0, 1.0, 1e-11])
    sys_ = LinearSystem(ModelKind.TIM1, M, np.ones(3), ("g",), 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        kern, info = solve_system(sys_)
    assert info["ridge"] == pytest.approx(1e-8 * (2 + 1e-11) / 3)
    assert 1e10 < info["condition"] < 1e12
    assert kern["g"][2] == pytest.approx(1 / (1e-11 + info["ridge"]))


def test_all_c_tim2_reduces_to_tim1():
    data = generate(FlowSpec(T=5000, days=3, seed=1, sign_memory=0.7, change_prob="1",
                             generator_model=power_law_model("tim1", L=10)))
    t1 = calibrate(data, "tim1", 10)
    t2 = calibrate(data, "tim2", 10)
    np.testing.assert_allclose(t2.kernels["g_c"], t1.kernels["g"], rtol=1e-8)
    assert np.all(t2.kernels["g_n"] == 0)


# --------------------------------------------------------------------------
# recovery at reduced scale (the full-size run is in the acceptance suite)


@pytest.mark.parametrize("kind", ["tim1", "tim2", "hdim2"])
def test_recovery_small(kind):
    L = 16
    truth = power_law_model(kind, L=L)
    data = generate(FlowSpec(T=50_000, days=6, sign_memory=0.7, seed=7, generator_model=truth))
    model = calibrate(data, kind, L, smooth=False)
    for name, k in truth.kernels.items():
        if name == "kappa_nc":
            k, got = k[1:9], model.kernels[name][1:9]
        else:
            k, got = k[:9], model.kernels[name][:9]
        np.testing.assert_allclose(got, k, rtol=0.05)
    if kind == "hdim2":
        assert model.kernels["kappa_nc"][0] == 0.0


def test_tim2_no_n_impact():
    truth = CalibratedModel("tim2", {"g_n": np.zeros(11), "g_c": 1e-4 / (1 + np.arange(11)) ** 0.5})
    data = generate(FlowSpec(T=20_000, days=4, sign_memory=0.7, seed=2, generator_model=truth))
    m = calibrate(data, "tim2", 10)
    assert np.max(np.abs(m.kernels["g_n"])) < 0.02 * m.kernels["g_c"][0]


def test_hdim2_on_cim2_data():
    data = generate(FlowSpec(T=20_000, days=8, sign_memory=0.7, seed=4))
    m = calibrate(data, "hdim2", 10, smooth=False)
    assert m.kernels["kappa_cc"][0] == pytest.approx(5e-5, rel=1e-6)
    assert np.max(np.abs(m.kernels["kappa_cc"][1:])) < 1e-6 * 5e-5
    assert np.max(np.abs(m.kernels["kappa_nc"])) < 1e-6 * 5e-5
    star = calibrate(data, "hdim2star", 10, smooth=False)
    assert np.sum(np.abs(star.kernels["kappa_nc"])) > 0.01 * 5e-5


def test_hdim2_star_agrees_on_factorising_data():
    # white signs and labels independent of them: the triple correlations
    # factorise, so the two estimators differ only by noise. The error of the
    # difference is a leave-one-day-out jackknife; the threshold is 3 sigma
    # family-wise over all kernel entries.
    truth = power_law_model("hdim2", L=10)
    data = generate(FlowSpec(T=10_000, days=16, sign_memory=0.5, change_prob="constant:0.4",
                             seed=5, generator_model=truth, noise=1e-4))
    est = estimate(data, 10, keep_days=True)

    def diff(e):
        a, _ = solve_system(assemble("hdim2", e))
        b, _ = solve_system(assemble("hdim2star", e))
        return np.concatenate([a[n] - b[n] for n in ("kappa_nc", "kappa_cc")])[1:]

    d = diff(est)
    n = est.n_days
    loo = np.array([diff(est.leave_one_out(k)) for k in range(n)])
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(axis=0)) ** 2, axis=0))
    assert np.max(np.abs(d / se)) < stats.norm.isf(0.0027 / 2 / len(d))


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_constraint_exact(seed):
    data = random_data(seed, days=2, T=80)
    for kind in ("hdim2", "hdim2star"):
        m = calibrate(data, kind, 5)
        assert m.kernels["kappa_nc"][0] == 0.0


# --------------------------------------------------------------------------
# constant impact


def test_estimate_cim2_examples():
    d = make_data([np.array([0.5, -0.5, 0.0])], [np.array([1, -1, 1])], [np.array([1, 1, 0])])
    assert estimate_cim2(d).delta_c == 0.5
    d = make_data([np.array([1.0, -1.0, 3.0])], [np.array([1, -1, 1])], [np.array([1, 1, 1])])
    assert estimate_cim2(d).delta_c == pytest.approx(5 / 3)
    d = make_data([np.zeros(3)], [np.array([1, -1, 1])], [np.zeros(3, int)])
    with pytest.raises(InputError):
        estimate_cim2(d)


def test_cim2_half_tick():
    # mid moves by half a tick of 0.01 at a price of 100
    data = generate(FlowSpec(T=1000, days=2, seed=0,
                             generator_model=CalibratedModel.cim2(np.log1p(0.005 / 100))))
    assert estimate_cim2(data).delta_c == pytest.approx(0.5 * 0.01 / 100, rel=1e-3)


# --------------------------------------------------------------------------
# smoothing


def test_smoothing_fidelity():
    k = 1e-4 * (1 + np.arange(513)) ** -0.5
    out = smooth_kernel(k)
    np.testing.assert_array_equal(out[:11], k[:11])
    np.testing.assert_allclose(out, k, rtol=0.01)


def test_smoothing_short_kernel_unchanged():
    k = np.arange(10.0)
    np.testing.assert_array_equal(smooth_kernel(k), k)
    with pytest.warns(RuntimeWarning):
        out = smooth_kernel(np.arange(14.0))
    np.testing.assert_array_equal(out, np.arange(14.0))


def test_smoothing_reduces_noise():
    rng = np.random.default_rng(0)
    tail = rng.normal(size=500)
    k = np.concatenate([np.ones(11), tail])
    out = smooth_kernel(k)
    assert np.var(out[11:]) < np.var(tail)


def test_calibrate_meta_and_many():
    data = generate(FlowSpec(T=3000, days=2, seed=1, sign_memory=0.7,
                             generator_model=power_law_model("hdim2", L=20)))
    res = calibrate_many(data, list(ModelKind), L=20)
    assert set(res) == {k.value for k in ModelKind}
    assert res["hdim2"].meta["smoothed"] and not res["tim2"].meta["smoothed"]
    assert res["tim1"].meta["tim1_matrix"] == "sign"
    assert res["hdim2"].meta["L_corr"] == 20 and res["hdim2"].L == 20
    m = calibrate(data, "tim2", 20, kernel_lag=5)
    assert m.L == 5
    with pytest.raises(InputError):
        calibrate(data, "tim2", 20, kernel_lag=21)
