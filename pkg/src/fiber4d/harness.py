"""Experiment orchestration and CLI.

Verbs: evaluate (launch-power x distance sweeps of a format against the full
transmission pipeline), train (wraps the end-to-end optimizer with a run
directory), energy-report, rrc-selftest and grad-check.  All commands emit
plot-ready CSV plus a config snapshot so any run is reproducible from its
output directory and seed.  Exit codes: 0 success, 1 user error, 2 numerical
failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import pathlib
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import constellation as cst
from . import metrics, nn, trainer
from .channel import (
    FiberLink,
    WdmConfig,
    channel_offsets,
    propagate_link,
    ssfm_span_backward,
    ssfm_span_with_tape,
    wdm_demux,
    wdm_mux,
)
from .dsp import (
    DualPolWaveform,
    cd_compensate,
    design_rrc,
    guard_symbols,
    matched_filter_downsample,
    modulate,
    set_launch_power,
    valid_symbol_slice,
)

BASELINES = {
    "pmqpsk": 2,
    "pm8qam": 3,
    "pm16qam": 4,
    "pm32qam": 5,
    "pm64qam": 6,
}


def baseline_constellation(name: str, mb_lambda: float | None = None) -> cst.Constellation4D:
    key = name.lower().replace("-", "").replace("_", "")
    if key == "pmps64qam":
        if mb_lambda is None:
            raise ValueError("pm-ps64qam requires --mb-lambda")
        return cst.make_mb_shaped_pm64qam(mb_lambda)
    if key not in BASELINES:
        raise ValueError(f"unknown baseline '{name}'; choices: {sorted(BASELINES)} or pm-ps64qam")
    return cst.make_pm_qam(BASELINES[key])


def simulate_point(
    consts: list[cst.Constellation4D],
    link: FiberLink,
    wdm: WdmConfig,
    rolloff: float,
    rrc_span: int,
    n_symbols: int,
    seed_seq: np.random.SeedSequence,
) -> metrics.GmiReport:
    """Full transmit -> fiber -> receive -> auxiliary-channel GMI evaluation
    of one (launch power, span count) grid point."""
    rng = np.random.default_rng(seed_seq)
    filt = design_rrc(rolloff, wdm.sps, rrc_span)
    tx_indices = []
    waves = []
    for c in range(wdm.n_channels):
        idx = rng.choice(consts[c].size, size=n_symbols, p=consts[c].probs)
        tx_indices.append(idx)
        w = modulate(consts[c].points[idx], filt, wdm.symbol_rate)
        waves.append(set_launch_power(w, wdm.per_channel_power_dbm[c]))
    out = propagate_link(wdm_mux(waves, wdm), link, rng)
    out.check_finite("propagated waveform")
    guard = guard_symbols(filt, link.beta2, link.total_length(), wdm.symbol_rate)
    flags = []
    if 2 * guard >= n_symbols - 16:
        guard = max((n_symbols - 16) // 2, 0)
        flags.append("guard-capped")
    sl = valid_symbol_slice(n_symbols, guard)
    offsets = channel_offsets(wdm, len(out))
    gmis, ents, cis = [], [], []
    for c in range(wdm.n_channels):
        base = wdm_demux(out, wdm, c)
        comp = cd_compensate(base, link.beta2, link.total_length(), center_offset_hz=offsets[c])
        rx = matched_filter_downsample(comp, filt, n_symbols)
        tx_pts = consts[c].points[tx_indices[c][sl]]
        rx_al, _ = metrics.align_symbols(tx_pts, rx[sl])
        gmi, details = metrics.gmi_aux_gaussian(
            consts[c], tx_indices[c][sl], rx_al, sigma2=None, return_details=True
        )
        ent = cst.entropy(consts[c])
        gmis.append(min(gmi, ent))
        ents.append(ent)
        cis.append(details["ci95"])
        flags.extend(details["flags"])
    return metrics.GmiReport(
        launch_power_dbm=wdm.per_channel_power_dbm[0],
        n_spans=link.n_spans,
        m=consts[0].m,
        symbol_rate=wdm.symbol_rate,
        per_channel_gmi=gmis,
        per_channel_entropy=ents,
        per_channel_ci95=cis,
        flags=flags,
    )


def _sweep_worker(payload):
    consts, link, wdm, rolloff, rrc_span, n_symbols, seed_entropy = payload
    return simulate_point(consts, link, wdm, rolloff, rrc_span, n_symbols, np.random.SeedSequence(seed_entropy))


def evaluate_sweep(
    consts: list[cst.Constellation4D],
    link: FiberLink,
    wdm: WdmConfig,
    powers_dbm: list[float],
    span_counts: list[int],
    rolloff: float,
    rrc_span: int,
    n_symbols: int,
    seed: int,
    jobs: int = 1,
) -> list[metrics.GmiReport]:
    """Grid sweep with one disjoint seed per point; rows come back sorted."""
    payloads = []
    for si, n_spans in enumerate(span_counts):
        for pi, p in enumerate(powers_dbm):
            link_p = dataclasses.replace(link, n_spans=n_spans)
            wdm_p = dataclasses.replace(wdm, per_channel_power_dbm=tuple([p] * wdm.n_channels))
            seed_entropy = (seed, si, pi)
            payloads.append((consts, link_p, wdm_p, rolloff, rrc_span, n_symbols, seed_entropy))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_sweep_worker, payloads))
    else:
        reports = [_sweep_worker(p) for p in payloads]
    reports.sort(key=lambda r: (r.n_spans, r.launch_power_dbm))
    return reports


def best_power_summary(reports: list[metrics.GmiReport]) -> list[dict]:
    """Per span count: the launch power maximizing average GMI."""
    by_spans: dict[int, metrics.GmiReport] = {}
    for rep in reports:
        cur = by_spans.get(rep.n_spans)
        if cur is None or rep.avg_gmi > cur.avg_gmi:
            by_spans[rep.n_spans] = rep
    rows = []
    for n_spans in sorted(by_spans):
        rep = by_spans[n_spans]
        rows.append(
            {
                "n_spans": n_spans,
                "best_power_dbm": rep.launch_power_dbm,
                "avg_gmi": rep.avg_gmi,
                "net_rate_gbps": rep.net_rate_gbps,
                "fec_oh_pct": rep.fec_oh_percent,
            }
        )
    return rows


def reach_table(summary_rows: list[dict], span_km: float, target_rates_gbps: list[float]) -> list[dict]:
    curve = [(row["n_spans"] * span_km, row["net_rate_gbps"]) for row in summary_rows]
    out = []
    for target in target_rates_gbps:
        try:
            reach = metrics.reach_at_rate(curve, target)
            out.append({"target_rate_gbps": target, "reach_km": reach})
        except ValueError as exc:
            out.append({"target_rate_gbps": target, "reach_km": float("nan"), "note": str(exc)})
    return out


def _write_dict_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for row in rows:
            f.write(",".join(str(row.get(c, "")) for c in cols) + "\n")


# ----------------------------------------------------------------------------
# CLI


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def _parse_floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _parse_ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_link_args(p: argparse.ArgumentParser):
    p.add_argument("--beta2-ps2-km", type=float, default=-21.67)
    p.add_argument("--gamma-per-w-km", type=float, default=1.2)
    p.add_argument("--alpha-db-km", type=float, default=0.2)
    p.add_argument("--span-km", type=float, default=80.0)
    p.add_argument("--nf-db", type=float, default=5.0)
    p.add_argument("--no-ase", action="store_true", help="disable amplifier noise")
    p.add_argument("--steps-per-span", type=int, default=200)
    p.add_argument("--center-wavelength-nm", type=float, default=1550.0)


def _add_wdm_args(p: argparse.ArgumentParser):
    p.add_argument("--channels", type=int, default=5)
    p.add_argument("--symbol-rate", type=float, default=50e9)
    p.add_argument("--spacing", type=float, default=51.5e9)
    p.add_argument("--sps", type=int, default=16)
    p.add_argument("--rolloff", type=float, default=0.01)
    p.add_argument("--rrc-span", type=int, default=256)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fiber4d", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    pe = sub.add_parser("evaluate", help="GMI sweep of a format over power and distance grids")
    src = pe.add_mutually_exclusive_group(required=True)
    src.add_argument("--baseline", help=f"one of {sorted(BASELINES)} or pm-ps64qam")
    src.add_argument("--format", dest="format_files", action="append", help="constellation file (repeat per channel)")
    pe.add_argument("--mb-lambda", type=float, default=None, help="Maxwell-Boltzmann shaping parameter")
    pe.add_argument("--mb-lambdas", type=str, default=None, help="comma list to sweep and pick the best")
    pe.add_argument("--powers-dbm", type=str, default="-4,-3,-2,-1,0,1,2,3,4,5,6")
    pe.add_argument("--spans", type=str, default="50")
    pe.add_argument("--symbols", type=int, default=2**13)
    pe.add_argument("--seed", type=int, default=1234)
    pe.add_argument("--jobs", type=int, default=int(os.environ.get("FIBER4D_JOBS", "1")))
    pe.add_argument("--target-rates-gbps", type=str, default="")
    pe.add_argument("--out-dir", required=True)
    _add_wdm_args(pe)
    _add_link_args(pe)

    pt = sub.add_parser("train", help="end-to-end shaping optimization run")
    pt.add_argument("--config", help="JSON file with TrainConfig fields")
    pt.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a TrainConfig field")
    pt.add_argument("--out-dir", required=True)
    pt.add_argument("--log-every", type=int, default=1)

    pg = sub.add_parser("energy-report", help="per-symbol energy table of a format")
    gsrc = pg.add_mutually_exclusive_group(required=True)
    gsrc.add_argument("--baseline")
    gsrc.add_argument("--format", dest="format_file")
    pg.add_argument("--mb-lambda", type=float, default=None)
    pg.add_argument("--out", required=True)

    pr = sub.add_parser("rrc-selftest", help="verify pulse-shaping filter invariants")
    pr.add_argument("--rolloff", type=float, default=0.01)
    pr.add_argument("--sps", type=int, default=16)
    pr.add_argument("--span", type=int, default=64)

    pc = sub.add_parser("grad-check", help="finite-difference audit of the differentiable path")
    pc.add_argument("--seed", type=int, default=0)
    return parser


def cmd_evaluate(args) -> int:
    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    nf = -math.inf if args.no_ase else args.nf_db
    link = FiberLink.from_practical_units(
        args.beta2_ps2_km, args.gamma_per_w_km, args.alpha_db_km, args.span_km,
        n_spans=1, nf_db=nf, steps_per_span=args.steps_per_span,
        center_wavelength_nm=args.center_wavelength_nm,
    )
    wdm = WdmConfig(args.channels, args.symbol_rate, args.spacing, args.sps, tuple([0.0] * args.channels))
    powers = _parse_floats(args.powers_dbm)
    spans = _parse_ints(args.spans)
    lambdas = _parse_floats(args.mb_lambdas) if args.mb_lambdas else None

    def consts_for(lam):
        if args.format_files:
            loaded = [cst.load(f) for f in args.format_files]
            if len(loaded) == 1:
                loaded = loaded * args.channels
            if len(loaded) != args.channels:
                raise ValueError(f"need 1 or {args.channels} format files, got {len(loaded)}")
            return loaded
        return [baseline_constellation(args.baseline, lam)] * args.channels

    snapshot = dict(vars(args))
    snapshot.pop("command", None)
    (out_dir / "config.json").write_text(json.dumps(snapshot, indent=2, default=str))

    all_reports = []
    if lambdas:
        for lam in lambdas:
            reps = evaluate_sweep(consts_for(lam), link, wdm, powers, spans,
                                  args.rolloff, args.rrc_span, args.symbols, args.seed, args.jobs)
            for r in reps:
                r.flags.append(f"mb_lambda={lam}")
            all_reports.extend(reps)
    else:
        all_reports = evaluate_sweep(consts_for(args.mb_lambda), link, wdm, powers, spans,
                                     args.rolloff, args.rrc_span, args.symbols, args.seed, args.jobs)
    metrics.write_reports_csv(all_reports, out_dir / "gmi.csv")
    summary = best_power_summary(all_reports)
    _write_dict_csv(summary, out_dir / "best_power.csv")
    targets = _parse_floats(args.target_rates_gbps) if args.target_rates_gbps else []
    if targets and len(summary) >= 2:
        _write_dict_csv(reach_table(summary, args.span_km, targets), out_dir / "reach.csv")
    for row in summary:
        print(
            f"spans={row['n_spans']:3d} best_power={row['best_power_dbm']:+.1f} dBm "
            f"avg_gmi={row['avg_gmi']:.3f} bits net_rate={row['net_rate_gbps']:.1f} Gb/s"
        )
    return 0


def cmd_train(args) -> int:
    fields = {}
    if args.config:
        fields.update(json.loads(pathlib.Path(args.config).read_text()))
    valid = {f.name for f in dataclasses.fields(trainer.TrainConfig)}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep or key not in valid:
            raise ValueError(f"unknown or malformed override '{item}'")
        try:
            fields[key] = json.loads(value)
        except json.JSONDecodeError:
            fields[key] = value
    cfg = trainer.TrainConfig(**fields)
    fmt, _ = trainer.train(cfg, out_dir=args.out_dir, log_every=args.log_every)
    final = fmt.training_curve[-1] if fmt.training_curve else None
    if final:
        print(f"finished {cfg.max_iters} iterations; final loss {final[2]:.4f}, GMI {final[1]}")
    return 0


def cmd_energy_report(args) -> int:
    if args.format_file:
        const = cst.load(args.format_file)
    else:
        const = baseline_constellation(args.baseline, args.mb_lambda)
    energies = const.energies()
    rows = [
        {"index": i, "label": const.labels[i], "energy": energies[i], "probability": const.probs[i]}
        for i in range(const.size)
    ]
    _write_dict_csv(rows, args.out)
    mean_e = float(const.probs @ energies)
    var_e = float(const.probs @ (energies - mean_e) ** 2)
    print(f"symbols={const.size} min_energy={energies.min():.6f} max_energy={energies.max():.6f} "
          f"mean={mean_e:.6f} variance={var_e:.6f}")
    return 0


def cmd_rrc_selftest(args) -> int:
    filt = design_rrc(args.rolloff, args.sps, args.span)
    taps = filt.taps
    checks = {
        "odd_taps": len(taps) % 2 == 1,
        "unit_energy": abs(float(np.sum(taps**2)) - 1.0) <= 1e-9,
        "symmetric": bool(np.max(np.abs(taps - taps[::-1])) <= 1e-12),
    }
    rc = np.convolve(taps, taps)
    sym = rc[(len(rc) // 2) % args.sps :: args.sps]
    peak = np.argmax(np.abs(sym))
    isi = np.max(np.abs(np.delete(sym, peak))) / np.abs(sym[peak])
    print(f"taps={len(taps)} cascade_isi={20 * math.log10(isi):.2f} dB")
    for name, ok in checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    return 0 if all(checks.values()) else 2


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0

    def fd_scalar(fun, x0, h=1e-6):
        g = np.zeros_like(x0)
        flat = x0.ravel()
        gf = g.ravel()
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = fun()
            flat[i] = old - h
            dn = fun()
            flat[i] = old
            gf[i] = (up - dn) / (2 * h)
        return g

    # dense net gradient
    net = nn.make_dense_net([3, 8, 1], ["relu", "sigmoid"], rng)
    x = nn.constant(rng.standard_normal((5, 3)))
    loss = nn.tsum(net.forward(x))
    nn.backward(loss)
    for p in net.parameters():
        ad = nn.grad_of(p)
        fd = fd_scalar(lambda: float(nn.tsum(net.forward(x)).value), p.value)
        denom = np.maximum(np.maximum(np.abs(ad), np.abs(fd)), 1e-6)
        worst = max(worst, float(np.max(np.abs(ad - fd) / denom)))
    # span adjoint
    link = FiberLink.from_practical_units(-21.67, 1.2, 0.2, 80.0, 1, -math.inf, steps_per_span=4)
    field = (rng.standard_normal((2, 64)) + 1j * rng.standard_normal((2, 64))) * 0.02
    w = DualPolWaveform(field[0], field[1], 64e9)
    probe = rng.standard_normal((2, 64)) + 1j * rng.standard_normal((2, 64))

    def span_loss():
        out = ssfm_span_with_tape(DualPolWaveform(field[0], field[1], 64e9), link)[0]
        return float(np.sum((np.conj(probe) * np.stack([out.x, out.y])).real))

    _, tape = ssfm_span_with_tape(w, link)
    ad = ssfm_span_backward(tape, probe)
    for part, view in (("re", field.view(np.float64)[:, 0::2]), ("im", field.view(np.float64)[:, 1::2])):
        fd = fd_scalar(span_loss, view)
        adp = ad.real if part == "re" else ad.imag
        denom = np.maximum(np.maximum(np.abs(adp), np.abs(fd)), 1e-6)
        worst = max(worst, float(np.max(np.abs(adp - fd) / denom)))
    print(f"max relative gradient error: {worst:.3e}")
    if worst > 1e-5:
        print("FAIL: gradient mismatch above 1e-5")
        return 2
    print("pass")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "evaluate": cmd_evaluate,
        "train": cmd_train,
        "energy-report": cmd_energy_report,
        "rrc-selftest": cmd_rrc_selftest,
        "grad-check": cmd_grad_check,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FloatingPointError, trainer.TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
