"""Tests for the evaluation pipeline, sweep orchestration and the CLI."""

import json
import math
from collections import Counter

import numpy as np
import pytest

from fiber4d import constellation as cst
from fiber4d import harness, metrics
from fiber4d.channel import FiberLink, WdmConfig

FAST_LINK = dict(
    beta2_ps2_km=-21.67,
    gamma_per_w_km=0.0,
    alpha_db_km=0.2,
    span_km=80.0,
    nf_db=-math.inf,
    steps_per_span=1,
)


def _link(n_spans, **over):
    params = {**FAST_LINK, **over}
    return FiberLink.from_practical_units(n_spans=n_spans, **params)


def _wdm(n_channels, power_dbm=0.0, sps=16):
    return WdmConfig(n_channels, 50e9, 51.5e9, sps, tuple([power_dbm] * n_channels))


class TestBaselines:
    def test_known_names(self):
        assert harness.baseline_constellation("pm32qam").size == 1024
        assert harness.baseline_constellation("PM-16QAM").size == 256
        assert harness.baseline_constellation("pm-ps64qam", 0.05).size == 4096

    def test_unknown_rejected(self):
        with pytest.raises(ValueError, match="unknown baseline"):
            harness.baseline_constellation("qam1234")

    def test_ps64_requires_lambda(self):
        with pytest.raises(ValueError, match="mb-lambda"):
            harness.baseline_constellation("pm-ps64qam")


class TestSimulatePoint:
    def test_noiseless_linear_pm32qam_saturates(self):
        """Noiseless linear channel: the auxiliary-channel GMI saturates at
        the full 10 bits regardless of launch power."""
        consts = [cst.make_pm_qam(5)] * 3
        for power in (-2.0, 3.0):
            rep = harness.simulate_point(
                consts, _link(2), _wdm(3, power), rolloff=0.01, rrc_span=256,
                n_symbols=2048, seed_seq=np.random.SeedSequence(0),
            )
            assert all(abs(g - 10.0) < 0.02 for g in rep.per_channel_gmi)

    def test_pm64_beats_pm32_on_identical_seeds(self):
        """Paired-seed oracle: in the ASE-limited linear regime a 12-bit
        format carries strictly more GMI than the 10-bit format."""
        link = _link(25, nf_db=5.0)
        seed = np.random.SeedSequence(42)
        gmis = {}
        for name in ("pm32qam", "pm64qam"):
            consts = [harness.baseline_constellation(name)] * 1
            rep = harness.simulate_point(
                consts, link, _wdm(1, 0.0), rolloff=0.01, rrc_span=256,
                n_symbols=2048, seed_seq=np.random.SeedSequence(42),
            )
            gmis[name] = rep.avg_gmi
        assert gmis["pm64qam"] > gmis["pm32qam"]

    def test_nonlinear_path_runs_and_reports(self):
        consts = [cst.make_pm_qam(2)] * 1
        rep = harness.simulate_point(
            consts, _link(2, gamma_per_w_km=1.2, nf_db=5.0, steps_per_span=4),
            _wdm(1, 2.0, sps=4), rolloff=0.1, rrc_span=64,
            n_symbols=1024, seed_seq=np.random.SeedSequence(7),
        )
        assert 0.0 <= rep.avg_gmi <= 4.0
        assert rep.launch_power_dbm == 2.0


class TestSweep:
    def test_row_count_and_sorting(self, tmp_path):
        consts = [cst.make_pm_qam(2)] * 2
        reports = harness.evaluate_sweep(
            consts, _link(1), _wdm(2), powers_dbm=[-1.0, 0.0, 1.0], span_counts=[1, 2],
            rolloff=0.1, rrc_span=64, n_symbols=512, seed=5,
        )
        assert len(reports) == 6
        keys = [(r.n_spans, r.launch_power_dbm) for r in reports]
        assert keys == sorted(keys)
        path = tmp_path / "gmi.csv"
        metrics.write_reports_csv(reports, path)
        rows = [ln for ln in path.read_text().splitlines() if not ln.startswith(("#", "power_dbm"))]
        assert len(rows) == 3 * 2 * 2  # powers x spans x channels

    def test_reproducible_from_seed(self):
        consts = [cst.make_pm_qam(2)]
        kwargs = dict(powers_dbm=[0.0], span_counts=[1], rolloff=0.1, rrc_span=64,
                      n_symbols=512, seed=9)
        a = harness.evaluate_sweep(consts, _link(1, nf_db=5.0), _wdm(1), **kwargs)
        b = harness.evaluate_sweep(consts, _link(1, nf_db=5.0), _wdm(1), **kwargs)
        assert a[0].per_channel_gmi == b[0].per_channel_gmi

    def test_best_power_summary_and_reach(self):
        def rep(n_spans, power, gmi):
            return metrics.GmiReport(power, n_spans, 4, 50e9, [gmi], [4.0], [0.0])

        reports = [rep(10, 0.0, 3.0), rep(10, 1.0, 3.5), rep(20, 0.0, 2.8), rep(20, 1.0, 2.0)]
        summary = harness.best_power_summary(reports)
        assert [(r["n_spans"], r["best_power_dbm"]) for r in summary] == [(10, 1.0), (20, 0.0)]
        table = harness.reach_table(summary, span_km=80.0, target_rates_gbps=[150.0])
        # log-linear interpolation between (800 km, 175 Gb/s) and (1600 km, 140 Gb/s)
        expected = 800 + 800 * (math.log(150 / 175) / math.log(140 / 175))
        assert abs(table[0]["reach_km"] - expected) < 1e-9


class TestEnergyReport:
    def test_pm32_energy_levels_combinatorial(self, tmp_path):
        """Enumeration oracle: 4D energies of PM-32QAM are pairwise sums of the
        2D cross energies {2,10,18,26,34} with multiplicities {4,8,4,8,8}."""
        out = tmp_path / "energy.csv"
        rc = harness.main(["energy-report", "--baseline", "pm32qam", "--out", str(out)])
        assert rc == 0
        levels_2d = {2: 4, 10: 8, 18: 4, 26: 8, 34: 8}
        expected = Counter()
        for e1, n1 in levels_2d.items():
            for e2, n2 in levels_2d.items():
                expected[e1 + e2] += n1 * n2
        mean_raw = 40.0  # 2 * mean 2D energy of the cross (= 20)
        got = Counter()
        for line in out.read_text().splitlines()[1:]:
            energy = float(line.split(",")[2])
            got[round(energy * mean_raw)] += 1
        assert got == expected

    def test_pm_qpsk_constant_modulus(self, tmp_path):
        out = tmp_path / "energy.csv"
        assert harness.main(["energy-report", "--baseline", "pmqpsk", "--out", str(out)]) == 0
        energies = [float(ln.split(",")[2]) for ln in out.read_text().splitlines()[1:]]
        assert np.allclose(energies, 1.0)

    def test_energy_expectation_is_one(self):
        for name in ("pm8qam", "pm64qam"):
            c = harness.baseline_constellation(name)
            assert abs(float(c.probs @ c.energies()) - 1.0) < 1e-9


class TestCli:
    def test_rrc_selftest_passes(self, capsys):
        assert harness.main(["rrc-selftest", "--rolloff", "0.01", "--sps", "16", "--span", "64"]) == 0
        out = capsys.readouterr().out
        assert "unit_energy: pass" in out

    def test_grad_check_passes(self, capsys):
        assert harness.main(["grad-check"]) == 0
        assert "pass" in capsys.readouterr().out

    def test_evaluate_writes_outputs(self, tmp_path):
        rc = harness.main([
            "evaluate", "--baseline", "pmqpsk", "--channels", "1", "--sps", "4",
            "--rolloff", "0.1", "--rrc-span", "64", "--symbols", "512",
            "--powers-dbm", "0", "--spans", "1", "--steps-per-span", "1",
            "--gamma-per-w-km", "0", "--no-ase", "--seed", "3",
            "--out-dir", str(tmp_path),
        ])
        assert rc == 0
        assert (tmp_path / "gmi.csv").exists()
        assert (tmp_path / "best_power.csv").exists()
        snapshot = json.loads((tmp_path / "config.json").read_text())
        assert snapshot["seed"] == 3
        header = (tmp_path / "gmi.csv").read_text().splitlines()[1]
        assert header == ",".join(metrics.CSV_COLUMNS)

    def test_evaluate_rejects_bad_format_file(self, tmp_path):
        bad = tmp_path / "bad.const"
        bad.write_text("nonsense\n")
        rc = harness.main([
            "evaluate", "--format", str(bad), "--channels", "1",
            "--powers-dbm", "0", "--spans", "1", "--out-dir", str(tmp_path / "out"),
        ])
        assert rc == 1

    def test_train_cli_emits_loadable_format(self, tmp_path):
        out = tmp_path / "run"
        rc = harness.main([
            "train", "--out-dir", str(out),
            "--set", "channel_kind=awgn", "--set", "m=2", "--set", "n_channels=1",
            "--set", "max_iters=12", "--set", "hidden_width=8",
            "--set", "symbols_per_channel=128", "--set", "seed=1",
        ])
        assert rc == 0
        const = cst.load(out / "learned_channel0.const")
        assert const.size == 4
        lines = (out / "loss.csv").read_text().splitlines()
        assert lines[0] == "iteration,gmi_ch0,loss"
        assert len(lines) == 13
        assert json.loads((out / "config.json").read_text())["m"] == 2

    def test_unknown_override_rejected(self, tmp_path):
        rc = harness.main(["train", "--out-dir", str(tmp_path), "--set", "bogus=1"])
        assert rc == 1

    def test_usage_error_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            harness.main(["evaluate"])  # missing required source/out-dir
        assert exc.value.code == 1
