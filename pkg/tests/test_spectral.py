import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import direct_triple_sums, direct_xcorr2, direct_xcorr3
from proplab import _pykernels, kernels
from proplab.spectral import (
    CrossCorr2,
    SegmentedSpectra,
    bispectrum,
    blind_spot_mask,
    segment_starts,
    triple_counts,
    welch_average,
    write_crosscorr3_csv,
    xcorr2,
    xcorr3,
)


def pm1(rng, T):
    return rng.choice([-1.0, 1.0], size=T)


def close(a, b, rel=1e-10, floor=1e-12):
    return np.all(np.abs(a - b) <= rel * np.abs(b) + floor)


class TestXcorr2:
    def test_constant_normalisation(self):
        cc = xcorr2(np.ones(8), np.ones(8), 4)
        np.testing.assert_allclose(cc.values, 1.0, rtol=0, atol=1e-14)

    def test_single_summand(self):
        f = np.zeros(8)
        g = np.zeros(8)
        f[0] = 1
        g[3] = 1
        cc = xcorr2(f, g, 7)
        expected = np.zeros(15)
        expected[3 + 7] = 1 / 5
        np.testing.assert_allclose(cc.values, expected, atol=1e-15)
        assert cc.counts[3 + 7] == 5

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(1)
        f, g = pm1(rng, 64), pm1(rng, 64)
        cc = xcorr2(f, g, 32)
        assert np.max(np.abs(cc.values - direct_xcorr2(f, g, 32))) <= 1e-12

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 64), st.data())
    def test_autocorr_symmetric(self, T, data):
        L = data.draw(st.integers(0, T - 1))
        f = np.asarray(data.draw(st.lists(st.floats(-5, 5), min_size=T, max_size=T)))
        cc = xcorr2(f, f, L)
        np.testing.assert_allclose(cc.values, cc.values[::-1], atol=1e-12)

    @pytest.mark.parametrize("T,L", [(5, 5), (0, 0)])
    def test_errors(self, T, L):
        with pytest.raises(ValueError):
            xcorr2(np.ones(T), np.ones(T), L)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            xcorr2(np.ones(5), np.ones(6), 2)


class TestBispectrum:
    def test_ones(self):
        B = bispectrum(np.ones(6), np.ones(6), np.ones(6))
        np.testing.assert_array_equal(B, np.ones((6, 6)))

    def test_real_input_conjugate_symmetry(self):
        rng = np.random.default_rng(2)
        F, G, H = (np.fft.fft(rng.normal(size=10)) for _ in range(3))
        B = bispectrum(F, G, H)
        neg = (-np.arange(10)) % 10
        np.testing.assert_allclose(B[np.ix_(neg, neg)], np.conj(B), atol=1e-10)

    def test_sinusoid_support(self):
        # cos at bin k has spectral mass only at +-k
        n, k = 16, 3
        x = np.cos(2 * np.pi * k * np.arange(n) / n)
        X = np.fft.fft(x)
        B = bispectrum(X, X, X)
        nz = np.argwhere(np.abs(B) > 1e-9)
        allowed = {k, n - k}
        for a, b in nz:
            assert a in allowed and b in allowed and (a + b) % n in allowed
        # (k, k) needs 2k on the grid: absent; (k, -k) maps to 0: absent
        assert len(nz) == 0

    def test_sinusoid_combination(self):
        # components at k and 2k make (k, k) -> 2k non-zero
        n, k = 16, 2
        t = np.arange(n)
        x = np.cos(2 * np.pi * k * t / n) + np.cos(2 * np.pi * 2 * k * t / n)
        X = np.fft.fft(x)
        B = bispectrum(X, X, X)
        expected = np.conj(X[2 * k]) * X[k] * X[k]
        assert abs(B[k, k] - expected) < 1e-9
        assert abs(B[k, k]) > 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            bispectrum(np.ones(4), np.ones(5), np.ones(4))


class TestXcorr3:
    def test_constant(self):
        cc = xcorr3(np.ones(10), np.ones(10), np.ones(10), 5)
        np.testing.assert_allclose(cc.values[cc.mask], 1.0, atol=1e-13)

    def test_zero_lag_identity(self):
        rng = np.random.default_rng(3)
        f, g, h = rng.normal(size=(3, 20))
        cc = xcorr3(f, g, h, 6)
        assert abs(cc.at(0, 0) - np.mean(f * g * h)) < 1e-13

    def test_matches_direct_sum(self):
        rng = np.random.default_rng(4)
        f, g, h = pm1(rng, 32), pm1(rng, 32), pm1(rng, 32)
        cc = xcorr3(f, g, h, 16)
        ref = direct_xcorr3(f, g, h, 16)
        assert close(cc.values[cc.mask], ref[cc.mask])

    def test_mask_is_blind_spot(self):
        cc = xcorr3(np.ones(9), np.ones(9), np.ones(9), 4)
        lags = np.arange(-4, 5)
        np.testing.assert_array_equal(cc.mask, np.abs(lags[:, None] - lags) <= 4)
        assert np.all(np.isnan(cc.values[~cc.mask]))
        with pytest.raises(IndexError):
            cc.at(4, -4)

    def test_permutation_identity(self):
        rng = np.random.default_rng(5)
        f, g, h = rng.normal(size=(3, 40))
        a = xcorr3(f, g, h, 10)
        b = xcorr3(f, h, g, 10)
        np.testing.assert_allclose(a.values[a.mask], b.values.T[a.mask], atol=1e-12)

    def test_counts(self):
        # opposite-sign lags: span |l - j|; same sign: max(|l|, |j|)
        c = triple_counts(10, 3)
        assert c[3 + 2, 3 - 1] == 10 - 3
        assert c[3 + 2, 3 + 3] == 10 - 3
        assert c[3 - 2, 3 - 1] == 10 - 2


class TestSegmentation:
    def test_exact_cover(self):
        np.testing.assert_array_equal(segment_starts(8, 8), [0])
        np.testing.assert_array_equal(segment_starts(5, 8), [0])
        np.testing.assert_array_equal(segment_starts(16, 8), [0, 8])

    def test_three_halves(self):
        np.testing.assert_array_equal(segment_starts(12, 8), [0, 4])

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 500), st.integers(1, 60))
    def test_cover_minimal(self, n, T):
        s = segment_starts(n, T)
        seg = min(n, T)
        assert s[0] == 0 and s[-1] + seg == n
        assert len(s) == -(-n // T)
        assert np.all(np.diff(s) <= seg)

    def test_day_average_matches_segment_oracle(self):
        rng = np.random.default_rng(6)
        T, L = 16, 8
        f, g, h = pm1(rng, 40), pm1(rng, 40), pm1(rng, 40)
        spec = SegmentedSpectra({"f": f, "g": g, "h": h}, L, segment_length=T)
        starts = spec.starts
        ref2 = np.mean([direct_xcorr2(f[a:a + T], g[a:a + T], L) for a in starts], axis=0)
        ref3 = np.mean(
            [direct_xcorr3(f[a:a + T], g[a:a + T], h[a:a + T], L) for a in starts], axis=0
        )
        assert np.max(np.abs(spec.xcorr2("f", "g").values - ref2)) < 1e-12
        c3 = spec.xcorr3("f", "g", "h")
        assert close(c3.values[c3.mask], ref3[c3.mask])


class TestWelch:
    def test_identity(self):
        c = xcorr2(np.arange(6.0), np.arange(6.0), 3)
        avg = welch_average([c, c, c])
        np.testing.assert_allclose(avg.values, c.values)

    def test_errors(self):
        with pytest.raises(ValueError):
            welch_average([])
        with pytest.raises(ValueError):
            welch_average([xcorr2(np.ones(5), np.ones(5), 2), xcorr2(np.ones(5), np.ones(5), 3)])

    def test_short_day_uses_true_counts(self):
        # a day shorter than the segment keeps its own summand counts
        rng = np.random.default_rng(7)
        L, T = 6, 12
        short = [pm1(rng, 9) for _ in range(3)]
        long_ = [pm1(rng, 30) for _ in range(3)]
        est = [
            SegmentedSpectra(dict(zip("fgh", d)), L, T).xcorr3("f", "g", "h")
            for d in (short, long_)
        ]
        avg = welch_average(est)
        sums, counts = direct_triple_sums(*short, L)
        ref_short = sums / np.maximum(counts, 1)
        starts = segment_starts(30, T)
        ref_long = np.mean([direct_xcorr3(*[x[a:a + T] for x in long_], L) for a in starts], axis=0)
        ref = 0.5 * (ref_short + ref_long)
        assert close(avg.values[avg.mask], ref[avg.mask])


class TestKernelBackends:
    def test_bispectrum_backends_agree(self):
        rng = np.random.default_rng(8)
        F, G, H = (np.fft.fft(rng.normal(size=(5, 12)), axis=1) for _ in range(3))
        a = np.zeros((12, 7), complex)
        b = np.zeros((12, 7), complex)
        _pykernels.accumulate_bispectrum(F, G, H, a)
        kernels.accumulate_bispectrum(F, G, H, b)
        ref = sum(bispectrum(F[s], G[s], H[s])[:, :7] for s in range(5))
        np.testing.assert_allclose(a, ref, atol=1e-10)
        np.testing.assert_allclose(b, ref, atol=1e-10)

    def test_convolve_backends_agree(self):
        rng = np.random.default_rng(9)
        x = rng.choice([-1.0, 0.0, 1.0], size=200)
        k = rng.normal(size=17)
        ref = np.array([sum(k[j] * x[t - j] for j in range(min(t + 1, 17))) for t in range(200)])
        np.testing.assert_allclose(_pykernels.causal_convolve(x, k), ref, atol=1e-12)
        np.testing.assert_allclose(kernels.causal_convolve(x, k), ref, atol=1e-12)

    @pytest.mark.parametrize("density", [0.05, 0.4, 1.0])
    def test_convolve_sparse_and_dense_paths(self, density):
        rng = np.random.default_rng(10)
        x = rng.choice([-1.0, 1.0], 300) * (rng.random(300) < density)
        x[::50] *= 0.5  # non-unit entries as well
        k = rng.normal(size=23)
        ref = np.array([sum(k[j] * x[t - j] for j in range(min(t + 1, 23))) for t in range(300)])
        np.testing.assert_allclose(kernels.causal_convolve(x, k), ref, atol=1e-12)
        if kernels.BACKEND == "cython":
            from proplab import _ckernels

            np.testing.assert_allclose(_ckernels.causal_convolve(x, k), ref, atol=1e-12)

    def test_convolve_kernel_longer_than_series(self):
        x = np.array([1.0, 2.0])
        k = np.array([1.0, 10.0, 100.0])
        np.testing.assert_allclose(kernels.causal_convolve(x, k), [1.0, 12.0])


def test_dump_crosscorr3(tmp_path):
    cc = xcorr3(np.ones(5), np.ones(5), np.ones(5), 2)
    p = tmp_path / "c3.csv"
    write_crosscorr3_csv(p, cc)
    lines = p.read_text().splitlines()
    assert lines[0] == "l,j,value,mask"
    assert len(lines) == 1 + 25
    l, j, v, m = lines[1].split(",")
    assert (l, j, m) == ("-2", "-2", "1") and abs(float(v) - 1) < 1e-12
    assert "-2,1,,0" in lines
