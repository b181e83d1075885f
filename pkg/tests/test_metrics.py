"""Tests for GMI estimators (vs quadrature and saturation oracles) and rate
arithmetic."""

import math

import numpy as np
import pytest

from fiber4d import constellation as cst
from fiber4d import metrics

LN2 = math.log(2.0)


def bpsk_mi_gauss_hermite(amplitude: float, noise_var: float, n_nodes: int = 160) -> float:
    """Independent quadrature oracle: mutual information of +/-a BPSK over a
    real Gaussian channel, I = 1 - E[log2(1 + exp(-2*a*y/v))], evaluated with
    Gauss-Hermite nodes."""
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    y = amplitude + math.sqrt(2.0 * noise_var) * nodes
    t = -2.0 * amplitude * y / noise_var
    integrand = np.logaddexp(0.0, t) / LN2
    return 1.0 - float(weights @ integrand) / math.sqrt(math.pi)


def pm_qpsk_gmi_oracle(snr_db_per_2d: float) -> float:
    """Gray-labeled PM-QPSK splits into 4 independent BPSK rails."""
    snr = 10 ** (snr_db_per_2d / 10)
    a = 0.5  # unit 4D energy puts +/-0.5 on every rail
    v = 0.25 / snr
    return 4.0 * bpsk_mi_gauss_hermite(a, v)


def awgn_receive(c, rng, k, snr_db_per_2d):
    idx = rng.integers(0, c.size, size=k)
    v = (c.mean_energy() / 2) / (10 ** (snr_db_per_2d / 10)) / 2  # per-dimension variance
    rx = c.points[idx] + rng.normal(0.0, math.sqrt(v), size=(k, 4))
    return idx, rx, 2 * v  # sigma2 of the exp(-d^2/sigma2) metric


class TestGmiNn:
    def test_perfect_demapper_reaches_entropy(self):
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, size=(500, 10)).astype(float)
        gmi = metrics.gmi_nn(10.0, bits, bits)
        assert abs(gmi - 10.0) < 4e-11 * 10

    def test_uninformative_demapper(self):
        rng = np.random.default_rng(1)
        bits = rng.integers(0, 2, size=(256, 6)).astype(float)
        gmi = metrics.gmi_nn(6.0, bits, np.full((256, 6), 0.5))
        assert abs(gmi - 0.0) < 1e-12

    def test_fixed_confidence_value(self):
        rng = np.random.default_rng(2)
        m = 4
        bits = rng.integers(0, 2, size=(1000, m)).astype(float)
        probs = np.where(bits == 1, 0.8, 0.2)
        gmi = metrics.gmi_nn(float(m), bits, probs)
        assert abs(gmi - (m + m * math.log2(0.8))) < 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            metrics.gmi_nn(1.0, np.zeros((0, 2)), np.zeros((0, 2)))


class TestGmiAuxGaussian:
    def test_noiseless_limit_reaches_entropy(self):
        c = cst.make_pm_qam(3)
        rng = np.random.default_rng(3)
        idx = rng.integers(0, c.size, size=512)
        gmi = metrics.gmi_aux_gaussian(c, idx, c.points[idx], sigma2=1e-12)
        assert abs(gmi - cst.entropy(c)) < 1e-9

    @pytest.mark.parametrize("snr_db", [0.0, 5.0, 10.0, 15.0])
    def test_pm_qpsk_against_quadrature_oracle(self, snr_db):
        c = cst.make_pm_qam(2)
        rng = np.random.default_rng(100 + int(snr_db))
        idx, rx, sigma2 = awgn_receive(c, rng, 1 << 16, snr_db)
        gmi = metrics.gmi_aux_gaussian(c, idx, rx, sigma2=sigma2)
        assert abs(gmi - pm_qpsk_gmi_oracle(snr_db)) < 0.02

    def test_pm32qam_saturates_at_high_snr(self):
        c = cst.make_pm_qam(5)
        rng = np.random.default_rng(30)
        idx, rx, sigma2 = awgn_receive(c, rng, 1 << 16, 30.0)
        gmi = metrics.gmi_aux_gaussian(c, idx, rx, sigma2=sigma2)
        assert abs(gmi - 10.0) < 0.02

    def test_rotation_invariance(self):
        c = cst.make_pm_qam(2)
        rng = np.random.default_rng(4)
        idx, rx, sigma2 = awgn_receive(c, rng, 4096, 8.0)
        q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        c_rot = cst.Constellation4D(c.points @ q.T, c.labels, c.probs)
        g0 = metrics.gmi_aux_gaussian(c, idx, rx, sigma2=sigma2)
        g1 = metrics.gmi_aux_gaussian(c_rot, idx, rx @ q.T, sigma2=sigma2)
        assert abs(g0 - g1) < 1e-9

    def test_fitting_never_hurts_vs_moment_matched(self):
        c = cst.make_pm_qam(4)
        rng = np.random.default_rng(5)
        idx, rx, _ = awgn_receive(c, rng, 4096, 9.0)
        mm = metrics.moment_matched_sigma2(c, idx, rx)
        g_mm = metrics.gmi_aux_gaussian(c, idx, rx, sigma2=mm)
        g_fit, details = metrics.gmi_aux_gaussian(c, idx, rx, return_details=True)
        assert g_fit >= g_mm - 1e-12
        assert details["sigma2"] > 0

    def test_negative_estimate_clipped_and_flagged(self):
        c = cst.make_pm_qam(2)
        rng = np.random.default_rng(6)
        idx = rng.integers(0, c.size, size=2048)
        rx = -c.points[idx]  # adversarial: every bit looks flipped
        gmi, details = metrics.gmi_aux_gaussian(c, idx, rx, sigma2=0.05, return_details=True)
        assert gmi == 0.0
        assert "clipped-negative" in details["flags"]

    def test_bounded_by_entropy(self):
        c = cst.make_mb_shaped_pm64qam(0.08)
        rng = np.random.default_rng(7)
        idx = rng.choice(c.size, size=4096, p=c.probs)
        rx = c.points[idx] + rng.normal(0, 0.05, size=(4096, 4))
        gmi = metrics.gmi_aux_gaussian(c, idx, rx)
        assert 0.0 <= gmi <= cst.entropy(c) + 1e-9

    def test_cross_estimator_consistency(self):
        """gmi_nn fed the true posterior bit probabilities must match the
        auxiliary-channel GMI on the same samples (per-sample identity)."""
        c = cst.make_pm_qam(3)
        rng = np.random.default_rng(8)
        idx, rx, sigma2 = awgn_receive(c, rng, 4096, 7.0)
        posts = metrics.posterior_bit_probs(c, rx, sigma2)
        bits = c.label_bits()[idx].astype(float)
        g_nn = metrics.gmi_nn(cst.entropy(c), bits, posts)
        g_aux = metrics.gmi_aux_gaussian(c, idx, rx, sigma2=sigma2)
        assert abs(g_nn - g_aux) < 1e-8


class TestAlign:
    def test_exact_gain_removed(self):
        c = cst.make_pm_qam(2)
        rng = np.random.default_rng(9)
        idx = rng.integers(0, 16, size=256)
        tx = c.points[idx]
        h = 0.02 * np.exp(1j * 1.1)
        tx_c = np.stack([tx[:, 0] + 1j * tx[:, 1], tx[:, 2] + 1j * tx[:, 3]])
        rx_c = h * tx_c
        rx = np.stack([rx_c[0].real, rx_c[0].imag, rx_c[1].real, rx_c[1].imag], axis=1)
        aligned, h_est = metrics.align_symbols(tx, rx)
        assert abs(h_est - h) < 1e-12
        assert np.max(np.abs(aligned - tx)) < 1e-12


class TestRateArithmetic:
    def test_headline_identities(self):
        net, oh = metrics.net_rate_and_oh(8.0, 10, 50e9)
        assert net == 400e9
        assert abs(oh - 25.0) < 1e-12
        spectral_efficiency = net / 51.5e9
        assert round(spectral_efficiency, 3) == 7.767

    def test_zero_overhead_at_full_rate(self):
        _, oh = metrics.net_rate_and_oh(10.0, 10, 50e9)
        assert oh == 0.0

    def test_invalid_gmi_rejected(self):
        with pytest.raises(ValueError):
            metrics.net_rate_and_oh(0.0, 10, 50e9)
        with pytest.raises(ValueError):
            metrics.net_rate_and_oh(11.0, 10, 50e9)

    def test_reach_ratio_identity(self):
        assert round((4000 / 3520 - 1) * 100, 2) == 13.64


class TestReachAtRate:
    def test_exact_grid_hit(self):
        curve = [(1000.0, 9.0), (2000.0, 8.0), (3000.0, 6.0)]
        assert metrics.reach_at_rate(curve, 8.0) == 2000.0

    def test_log_linear_interpolation(self):
        # a curve that is exactly log-linear in rate is reproduced anywhere
        d = np.array([1000.0, 2000.0, 3000.0])
        r = 10.0 * np.exp(-d / 2500.0)
        curve = list(zip(d, r))
        target_d = 1500.0
        target_r = 10.0 * math.exp(-target_d / 2500.0)
        assert abs(metrics.reach_at_rate(curve, target_r) - target_d) < 1e-9

    def test_midpoint_of_log_linear_curve(self):
        d1, d2 = 2000.0, 4000.0
        r1, r2 = 8.0, 2.0
        mid_rate = math.exp((math.log(r1) + math.log(r2)) / 2)
        curve = [(d1, r1), (d2, r2)]
        assert abs(metrics.reach_at_rate(curve, mid_rate) - 3000.0) < 1e-9

    def test_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="outside"):
            metrics.reach_at_rate([(1000.0, 5.0), (2000.0, 4.0)], 10.0)

    def test_non_monotone_rejected(self):
        with pytest.raises(ValueError, match="monotone"):
            metrics.reach_at_rate([(1000.0, 5.0), (2000.0, 6.0)], 5.5)


class TestGmiReport:
    def _report(self):
        return metrics.GmiReport(
            launch_power_dbm=1.0,
            n_spans=50,
            m=10,
            symbol_rate=50e9,
            per_channel_gmi=[8.0, 7.9],
            per_channel_entropy=[10.0, 10.0],
            per_channel_ci95=[0.01, 0.02],
        )

    def test_derived_quantities(self):
        rep = self._report()
        assert abs(rep.avg_gmi - 7.95) < 1e-12
        assert abs(rep.net_rate_gbps - 397.5) < 1e-9
        assert abs(rep.fec_oh_percent - 100 * (10 / 7.95 - 1)) < 1e-9

    def test_invariant_enforced(self):
        with pytest.raises(ValueError):
            metrics.GmiReport(1.0, 50, 10, 50e9, [10.5], [10.0], [0.0])

    def test_csv_schema_pinned(self, tmp_path):
        path = tmp_path / "report.csv"
        metrics.write_reports_csv([self._report()], path)
        lines = path.read_text().splitlines()
        assert lines[0] == f"# {metrics.CSV_SCHEMA}"
        assert lines[1] == "power_dbm,n_spans,channel,entropy,gmi,net_rate_gbps,fec_oh_pct,ci95"
        assert len(lines) == 4  # header + schema + one row per channel
