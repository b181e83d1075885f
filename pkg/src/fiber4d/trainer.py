"""End-to-end shaping optimizer.

Per channel: a probabilistic-shaping net produces symbol logits, a
straight-through Gumbel-Softmax sampler draws one-hot symbols, a geometric
shaping net maps one-hots to 4D points (energy-normalized in-graph), the
waveform is pulse-shaped, scaled to a learned launch power, WDM-muxed and
propagated through the split-step fiber; per-bit demapper nets then estimate
bit probabilities and the summed per-channel GMI (negated) is minimized with
Adam.  A symbol-level AWGN stand-in channel is available for fast runs.

The default configuration is a desk-scale profile (single channel, m=6,
10 spans); `TrainConfig.paper_profile()` gives the full 5-channel setup.
"""

from __future__ import annotations

import dataclasses
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .channel import (
    FiberLink,
    WdmConfig,
    channel_offsets,
    propagate_link_backward,
    propagate_link_with_tape,
)
from .constellation import Constellation4D, normalize
from .dsp import DualPolWaveform, design_rrc, filter_spectrum

CHECKPOINT_VERSION = "fiber4d-checkpoint v1"
LN2 = math.log(2.0)


class TrainingDiverged(FloatingPointError):
    """Raised after three consecutive non-finite training steps."""


@dataclass
class TrainConfig:
    m: int = 6  # bits per 4D symbol
    n_channels: int = 1
    n_spans: int = 10
    batch_items: int = 1
    symbols_per_channel: int = 2**11
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_iters: int = 2000
    precision: str = "double"  # "single" | "double"
    temperature: float = 1.0
    seed: int = 0
    hidden_width: int = 256
    init_power_dbm: float = 0.0
    channel_kind: str = "fiber"  # "fiber" | "awgn"
    awgn_snr_db: float = 12.0
    # channel physics (overridable for desk-scale runs)
    symbol_rate: float = 50e9
    spacing: float = 51.5e9
    sps: int = 4
    rolloff: float = 0.01
    rrc_span_symbols: int = 128
    steps_per_span: int = 25
    span_km: float = 80.0
    beta2_ps2_km: float = -21.67
    gamma_per_w_km: float = 1.2
    alpha_db_km: float = 0.2
    nf_db: float = 5.0
    center_wavelength_nm: float = 1550.0
    checkpoint_every: int = 0  # 0 disables periodic checkpoints

    def __post_init__(self):
        if self.m < 1 or self.m > 12:
            raise ValueError("m must be in 1..12")
        if self.precision not in ("single", "double"):
            raise ValueError("precision must be 'single' or 'double'")
        if self.channel_kind not in ("fiber", "awgn"):
            raise ValueError("channel_kind must be 'fiber' or 'awgn'")
        for name in ("n_channels", "n_spans", "batch_items", "symbols_per_channel", "max_iters"):
            if getattr(self, name) < (0 if name == "n_spans" else 1):
                raise ValueError(f"{name} must be positive")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")

    @classmethod
    def paper_profile(cls, **overrides) -> "TrainConfig":
        """Full-scale profile: 5 x 50 GBd channels, m=10, 50 spans, 16 sps."""
        base = dict(
            m=10,
            n_channels=5,
            n_spans=50,
            batch_items=2,
            symbols_per_channel=2**13,
            max_iters=300_000,
            precision="single",
            sps=16,
            rrc_span_symbols=128,
            steps_per_span=25,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def M(self) -> int:
        return 1 << self.m

    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    def cdtype(self):
        return np.complex64 if self.precision == "single" else np.complex128

    def link(self) -> FiberLink:
        return FiberLink.from_practical_units(
            beta2_ps2_km=self.beta2_ps2_km,
            gamma_per_w_km=self.gamma_per_w_km,
            alpha_db_km=self.alpha_db_km,
            span_km=self.span_km,
            n_spans=self.n_spans,
            nf_db=self.nf_db,
            steps_per_span=self.steps_per_span,
            center_wavelength_nm=self.center_wavelength_nm,
        )

    def wdm(self) -> WdmConfig:
        return WdmConfig(
            n_channels=self.n_channels,
            symbol_rate=self.symbol_rate,
            spacing=self.spacing,
            sps=self.sps,
            per_channel_power_dbm=tuple([self.init_power_dbm] * self.n_channels),
        )


@dataclass
class ChannelModels:
    ps: nn.DenseNet
    gs: nn.DenseNet
    demappers: list[nn.DenseNet]
    power_dbm: nn.Tensor


@dataclass
class ModelSet:
    channels: list[ChannelModels]

    def parameters(self) -> list[nn.Tensor]:
        out: list[nn.Tensor] = []
        for ch in self.channels:
            out.extend(ch.ps.parameters())
            out.extend(ch.gs.parameters())
            for dm in ch.demappers:
                out.extend(dm.parameters())
            out.append(ch.power_dbm)
        return out


def build_ps_net(m_bits: int, width: int, rng, dtype) -> nn.DenseNet:
    M = 1 << m_bits
    return nn.make_dense_net([M, width, width, M], ["relu", "relu", "linear"], rng, dtype)


def build_gs_net(m_bits: int, width: int, rng, dtype) -> nn.DenseNet:
    M = 1 << m_bits
    return nn.make_dense_net([M, width, width, width, 4], ["relu", "relu", "relu", "linear"], rng, dtype)


def build_demapper_net(width: int, rng, dtype) -> nn.DenseNet:
    return nn.make_dense_net([4, width, width, width, 1], ["relu", "relu", "relu", "sigmoid"], rng, dtype)


def build_models(cfg: TrainConfig, rng: np.random.Generator | None = None) -> ModelSet:
    """One PS net, one GS net, m demapper nets and a launch-power scalar per channel."""
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    dtype = cfg.dtype()
    channels = []
    for _ in range(cfg.n_channels):
        ps = build_ps_net(cfg.m, cfg.hidden_width, rng, dtype)
        gs = build_gs_net(cfg.m, cfg.hidden_width, rng, dtype)
        demappers = [build_demapper_net(cfg.hidden_width, rng, dtype) for _ in range(cfg.m)]
        power = nn.parameter(np.asarray(cfg.init_power_dbm, dtype=dtype))
        channels.append(ChannelModels(ps, gs, demappers, power))
    return ModelSet(channels)


def symbol_logits(ch: ChannelModels, M: int, dtype) -> nn.Tensor:
    """Per-symbol logits: the PS net applied to the constant one-hot set; the
    logit for symbol i is output component i under input one-hot i."""
    eye = nn.constant(np.eye(M, dtype=dtype))
    out = ch.ps.forward(eye)
    return nn.tsum(nn.mul(out, eye), axis=1)


def _entropy_bits(probs: nn.Tensor) -> nn.Tensor:
    return nn.neg(nn.tsum(nn.mul(probs, nn.log(probs)))) * (1.0 / LN2)


def _normalized_points(ch: ChannelModels, probs: nn.Tensor, M: int, dtype) -> nn.Tensor:
    """All M constellation points from the GS net, scaled in-graph so the
    average energy under the current probabilities is one."""
    eye = nn.constant(np.eye(M, dtype=dtype))
    pts = ch.gs.forward(eye)
    row_energy = nn.tsum(nn.mul(pts, pts), axis=1)
    mean_energy = nn.tsum(nn.mul(probs, row_energy))
    return nn.mul(pts, nn.power(mean_energy, -0.5))


class FiberSystem:
    """Differentiable transmit -> WDM -> split-step fiber -> receive chain.

    Forward runs in plain numpy with a per-span tape; the node's VJP plays
    the exact adjoint of every stage back to the 4D symbols and the
    per-channel launch powers (dBm).
    """

    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.link = cfg.link()
        self.wdm = cfg.wdm()
        self.filt = design_rrc(cfg.rolloff, cfg.sps, cfg.rrc_span_symbols)
        self.n_samples = cfg.symbols_per_channel * cfg.sps
        if len(self.filt.taps) > self.n_samples:
            raise ValueError("RRC span exceeds the processing block; reduce rrc_span_symbols")
        self.sample_rate = self.wdm.sample_rate
        spec = filter_spectrum(self.filt, self.n_samples)
        self.h_spec = spec.astype(cfg.cdtype())
        offsets = channel_offsets(self.wdm, self.n_samples)
        t_idx = np.arange(self.n_samples) / self.sample_rate
        self.carriers = [
            np.exp(2j * np.pi * f * t_idx).astype(cfg.cdtype()) if f != 0 else None for f in offsets
        ]
        omega = 2 * np.pi * np.fft.fftfreq(self.n_samples, 1.0 / self.sample_rate)
        total_len = self.link.total_length()
        self.cdc_mult = [
            np.exp(-1j * (self.link.beta2 / 2.0) * (omega + 2 * np.pi * f) ** 2 * total_len).astype(cfg.cdtype())
            for f in offsets
        ]

    def _shape_and_scale(self, x4: np.ndarray, p_dbm: float):
        sps = self.cfg.sps
        up = np.zeros((2, self.n_samples), dtype=self.cfg.cdtype())
        up[0, ::sps] = x4[:, 0] + 1j * x4[:, 1]
        up[1, ::sps] = x4[:, 2] + 1j * x4[:, 3]
        v = np.fft.ifft(np.fft.fft(up, axis=-1) * self.h_spec, axis=-1) * math.sqrt(sps)
        p_bar = float(np.mean(np.abs(v[0]) ** 2 + np.abs(v[1]) ** 2))
        p_watt = 1e-3 * 10.0 ** (float(p_dbm) / 10.0)
        scale = math.sqrt(p_watt / p_bar)
        return v, p_bar, p_watt, scale

    def forward_node(self, symbols: list[nn.Tensor], powers: list[nn.Tensor], rng: np.random.Generator) -> nn.Tensor:
        cfg = self.cfg
        n_ch, K, sps = cfg.n_channels, cfg.symbols_per_channel, cfg.sps
        vs, pbars, pwatts, scales = [], [], [], []
        mux = np.zeros((2, self.n_samples), dtype=cfg.cdtype())
        for c in range(n_ch):
            v, p_bar, p_watt, scale = self._shape_and_scale(symbols[c].value, powers[c].value)
            vs.append(v)
            pbars.append(p_bar)
            pwatts.append(p_watt)
            scales.append(scale)
            w = v * scale
            mux += w * self.carriers[c] if self.carriers[c] is not None else w
        wave = DualPolWaveform(mux[0], mux[1], self.sample_rate)
        wave_out, tapes = propagate_link_with_tape(wave, self.link, rng)
        field_out = np.stack([wave_out.x, wave_out.y])
        outs = np.empty((n_ch, K, 4), dtype=cfg.dtype())
        rx_syms = []
        for c in range(n_ch):
            base = field_out * np.conj(self.carriers[c]) if self.carriers[c] is not None else field_out
            # fused CDC (with the channel's absolute frequency offset) + matched filter
            mult = self.cdc_mult[c] * self.h_spec / math.sqrt(sps)
            rx = np.fft.ifft(np.fft.fft(base, axis=-1) * mult, axis=-1)[:, ::sps]
            rx_scale = math.sqrt(pwatts[c] / 1e-3)
            s = rx / rx_scale
            rx_syms.append(s)
            outs[c] = np.stack([s[0].real, s[0].imag, s[1].real, s[1].imag], axis=1).astype(cfg.dtype())

        def vjp(grad: np.ndarray):
            g_mux = np.zeros((2, self.n_samples), dtype=cfg.cdtype())
            b_terms = []
            for c in range(n_ch):
                g_s = np.stack(
                    [grad[c, :, 0] + 1j * grad[c, :, 1], grad[c, :, 2] + 1j * grad[c, :, 3]]
                ).astype(cfg.cdtype())
                b_terms.append(float(np.sum((np.conj(g_s) * rx_syms[c]).real)))
                rx_scale = math.sqrt(pwatts[c] / 1e-3)
                g_rx = np.zeros((2, self.n_samples), dtype=cfg.cdtype())
                g_rx[:, ::sps] = g_s / rx_scale
                mult = self.cdc_mult[c] * self.h_spec / math.sqrt(sps)
                g_base = np.fft.ifft(np.fft.fft(g_rx, axis=-1) * np.conj(mult), axis=-1)
                g_mux += g_base * self.carriers[c] if self.carriers[c] is not None else g_base
            g_in = propagate_link_backward(tapes, g_mux)
            parent_grads = []
            power_grads = []
            for c in range(n_ch):
                g_w = g_in * np.conj(self.carriers[c]) if self.carriers[c] is not None else g_in.copy()
                v, scale = vs[c], scales[c]
                a_term = float(np.sum((np.conj(g_w) * v).real))
                g_v = scale * g_w - (a_term * scale / (pbars[c] * self.n_samples)) * v
                g_u = np.fft.ifft(np.fft.fft(g_v, axis=-1) * np.conj(self.h_spec), axis=-1) * math.sqrt(sps)
                g_sym = g_u[:, ::sps]
                g_x4 = np.stack([g_sym[0].real, g_sym[0].imag, g_sym[1].real, g_sym[1].imag], axis=1)
                parent_grads.append(g_x4.astype(cfg.dtype()))
                # launch-power path (through the scale) and rx-normalization path
                d_watt = (a_term * scale - b_terms[c]) / (2 * pwatts[c])
                g_dbm = d_watt * pwatts[c] * math.log(10.0) / 10.0
                power_grads.append(np.asarray(g_dbm, dtype=cfg.dtype()))
            return tuple(parent_grads) + tuple(power_grads)

        return nn.make_node(outs, tuple(symbols) + tuple(powers), vjp)


@dataclass
class StepResult:
    loss: float
    per_channel_gmi: list[float]
    aborted: bool = False


def _channel_tx(ch: ChannelModels, cfg: TrainConfig, rng: np.random.Generator):
    """Sample one batch of transmit symbols for a channel; returns the graph
    pieces (entropy, symbols tensor) plus the drawn bit matrix."""
    logits = symbol_logits(ch, cfg.M, cfg.dtype())
    probs = nn.softmax(logits)
    h_bits = _entropy_bits(probs)
    onehots = nn.gumbel_softmax_st(logits, cfg.temperature, rng, n_samples=cfg.symbols_per_channel)
    points = _normalized_points(ch, probs, cfg.M, cfg.dtype())
    x4 = nn.matmul(onehots, points)
    idx = onehots.value.argmax(axis=1)
    bit_matrix = (idx[:, None] >> np.arange(cfg.m - 1, -1, -1)[None, :]) & 1
    return h_bits, x4, bit_matrix.astype(cfg.dtype())


def _channel_gmi(ch: ChannelModels, h_bits: nn.Tensor, rx: nn.Tensor, bit_matrix: np.ndarray, cfg) -> nn.Tensor:
    """Differentiable H(X) + (1/K) sum h_b from the demapper outputs, bits."""
    total = None
    for i, dm in enumerate(ch.demappers):
        r = nn.clip(dm.forward(rx), 1e-12, 1.0 - 1e-12)
        b = nn.constant(bit_matrix[:, i : i + 1])
        h_b = nn.add(nn.mul(b, nn.log(r)), nn.mul(1.0 - b, nn.log(1.0 - r)))
        term = nn.tmean(h_b)
        total = term if total is None else nn.add(total, term)
    return nn.add(h_bits, nn.mul(total, nn.constant(1.0 / LN2)))


def train_step(
    models: ModelSet,
    cfg: TrainConfig,
    rng: np.random.Generator,
    adam_state: dict | None = None,
    system: FiberSystem | None = None,
) -> StepResult:
    """One optimization step: forward all batch items, backprop the summed
    negative GMI and apply Adam.  A non-finite loss aborts the update."""
    if cfg.channel_kind == "fiber" and system is None:
        system = FiberSystem(cfg)
    params = models.parameters()
    nn.zero_grads(params)
    losses = []
    gmi_acc = np.zeros(cfg.n_channels)
    for _ in range(cfg.batch_items):
        tx = [_channel_tx(ch, cfg, rng) for ch in models.channels]
        if cfg.channel_kind == "fiber":
            rx_all = system.forward_node(
                [t[1] for t in tx], [ch.power_dbm for ch in models.channels], rng
            )
            rx_list = [nn.getitem(rx_all, c) for c in range(cfg.n_channels)]
        else:
            sigma = math.sqrt(10.0 ** (-cfg.awgn_snr_db / 10.0) / 4.0)
            rx_list = [
                nn.add(t[1], nn.constant(sigma * rng.standard_normal(t[1].shape).astype(cfg.dtype())))
                for t in tx
            ]
        item_loss = None
        for c, ch in enumerate(models.channels):
            gmi_c = _channel_gmi(ch, tx[c][0], rx_list[c], tx[c][2], cfg)
            gmi_acc[c] += float(gmi_c.value)
            item_loss = nn.neg(gmi_c) if item_loss is None else nn.add(item_loss, nn.neg(gmi_c))
        losses.append(item_loss)
    loss = losses[0]
    for extra in losses[1:]:
        loss = nn.add(loss, extra)
    loss = nn.mul(loss, nn.constant(1.0 / cfg.batch_items))
    loss_val = float(loss.value)
    if not math.isfinite(loss_val):
        return StepResult(loss_val, list(gmi_acc / cfg.batch_items), aborted=True)
    nn.backward(loss)
    grads = [nn.grad_of(p) for p in params]
    if not all(np.all(np.isfinite(g)) for g in grads):
        return StepResult(loss_val, list(gmi_acc / cfg.batch_items), aborted=True)
    if adam_state is not None:
        nn.adam_step(params, grads, adam_state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        for p in params:
            if not np.all(np.isfinite(p.value)):
                raise TrainingDiverged("non-finite parameter after optimizer update")
    return StepResult(loss_val, list(gmi_acc / cfg.batch_items))


@dataclass
class LearnedFormat:
    """Extraction of a trained model set: per-channel formats plus receiver
    weights and the recorded training curve."""

    constellations: list[Constellation4D]
    launch_powers_dbm: list[float]
    demapper_states: list[list[list[np.ndarray]]]  # [channel][bit][param arrays]
    training_curve: list[tuple[int, list[float], float]] = field(default_factory=list)
    degenerate: list[bool] = field(default_factory=list)


def extract_format(models: ModelSet, cfg: TrainConfig) -> LearnedFormat:
    """Deterministic readout: GS net on all one-hots gives the points, the PS
    softmax gives the probabilities, labels follow the one-hot index bits."""
    consts = []
    powers = []
    dm_states = []
    degenerate = []
    labels = tuple(format(i, f"0{cfg.m}b") for i in range(cfg.M))
    for ch in models.channels:
        logits = symbol_logits(ch, cfg.M, cfg.dtype()).value.astype(np.float64)
        z = logits - logits.max()
        probs = np.exp(z) / np.sum(np.exp(z))
        probs /= probs.sum()
        eye = nn.constant(np.eye(cfg.M, dtype=cfg.dtype()))
        points = ch.gs.forward(eye).value.astype(np.float64)
        const = normalize(Constellation4D(points, labels, probs))
        d2 = np.sum((const.points[:, None, :] - const.points[None, :, :]) ** 2, axis=2)
        np.fill_diagonal(d2, np.inf)
        degen = bool(np.min(d2) < 1e-12)
        if degen:
            warnings.warn("extracted constellation has near-coincident points", RuntimeWarning)
        consts.append(const)
        powers.append(float(ch.power_dbm.value))
        dm_states.append([[arr.copy() for arr in dm.state_arrays()] for dm in ch.demappers])
        degenerate.append(degen)
    return LearnedFormat(consts, powers, dm_states, degenerate=degenerate)


def save_checkpoint(path, models: ModelSet, adam_state: dict, rng: np.random.Generator, iteration: int, cfg: TrainConfig) -> None:
    arrays = {}
    for ci, ch in enumerate(models.channels):
        for pi, arr in enumerate(ch.ps.state_arrays()):
            arrays[f"ch{ci}_ps_{pi}"] = arr
        for pi, arr in enumerate(ch.gs.state_arrays()):
            arrays[f"ch{ci}_gs_{pi}"] = arr
        for di, dm in enumerate(ch.demappers):
            for pi, arr in enumerate(dm.state_arrays()):
                arrays[f"ch{ci}_dm{di}_{pi}"] = arr
        arrays[f"ch{ci}_power"] = np.asarray(ch.power_dbm.value)
    for i, (m_arr, v_arr) in enumerate(zip(adam_state["m"], adam_state["v"])):
        arrays[f"adam_m_{i}"] = m_arr
        arrays[f"adam_v_{i}"] = v_arr
    np.savez(
        path,
        version=CHECKPOINT_VERSION,
        config=json.dumps(dataclasses.asdict(cfg)),
        iteration=iteration,
        adam_t=adam_state["t"],
        rng_state=json.dumps(rng.bit_generator.state),
        **arrays,
    )


def load_checkpoint(path) -> tuple[ModelSet, dict, np.random.Generator, int, TrainConfig]:
    try:
        data = np.load(path, allow_pickle=False)
    except Exception as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    if "version" not in data or str(data["version"]) != CHECKPOINT_VERSION:
        raise ValueError(f"checkpoint version mismatch: expected '{CHECKPOINT_VERSION}'")
    cfg = TrainConfig(**json.loads(str(data["config"])))
    models = build_models(cfg)
    dtype = cfg.dtype()
    for ci, ch in enumerate(models.channels):
        ch.ps.load_state_arrays([data[f"ch{ci}_ps_{pi}"] for pi in range(len(ch.ps.parameters()))])
        ch.gs.load_state_arrays([data[f"ch{ci}_gs_{pi}"] for pi in range(len(ch.gs.parameters()))])
        for di, dm in enumerate(ch.demappers):
            dm.load_state_arrays([data[f"ch{ci}_dm{di}_{pi}"] for pi in range(len(dm.parameters()))])
        ch.power_dbm.value = np.asarray(data[f"ch{ci}_power"], dtype=dtype)
    n_params = len(models.parameters())
    adam_state = {
        "m": [data[f"adam_m_{i}"] for i in range(n_params)],
        "v": [data[f"adam_v_{i}"] for i in range(n_params)],
        "t": int(data["adam_t"]),
    }
    rng = np.random.default_rng()
    rng.bit_generator.state = json.loads(str(data["rng_state"]))
    return models, adam_state, rng, int(data["iteration"]), cfg


def train(
    cfg: TrainConfig,
    out_dir=None,
    models: ModelSet | None = None,
    adam_state: dict | None = None,
    rng: np.random.Generator | None = None,
    start_iteration: int = 0,
    log_every: int = 1,
) -> tuple[LearnedFormat, ModelSet]:
    """Run the optimization loop; halts after 3 consecutive non-finite steps."""
    import pathlib

    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if models is None:
        models = build_models(cfg, rng)
    if adam_state is None:
        adam_state = nn.adam_init(models.parameters())
    system = FiberSystem(cfg) if cfg.channel_kind == "fiber" else None
    curve: list[tuple[int, list[float], float]] = []
    out_path = pathlib.Path(out_dir) if out_dir is not None else None
    loss_file = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        (out_path / "config.json").write_text(json.dumps(dataclasses.asdict(cfg), indent=2))
        loss_file = open(out_path / "loss.csv", "a")
        if start_iteration == 0:
            loss_file.write("iteration," + ",".join(f"gmi_ch{c}" for c in range(cfg.n_channels)) + ",loss\n")
    consecutive_aborts = 0
    try:
        for it in range(start_iteration, cfg.max_iters):
            result = train_step(models, cfg, rng, adam_state, system)
            if result.aborted:
                consecutive_aborts += 1
                warnings.warn(f"non-finite loss at iteration {it}; step skipped", RuntimeWarning)
                if consecutive_aborts >= 3:
                    raise TrainingDiverged(f"3 consecutive non-finite losses, last at iteration {it}")
                continue
            consecutive_aborts = 0
            if it % log_every == 0 or it == cfg.max_iters - 1:
                curve.append((it, result.per_channel_gmi, result.loss))
                if loss_file is not None:
                    gmis = ",".join(f"{g:.6f}" for g in result.per_channel_gmi)
                    loss_file.write(f"{it},{gmis},{result.loss:.6f}\n")
            if cfg.checkpoint_every and out_path is not None and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out_path / f"checkpoint_{it + 1}.npz", models, adam_state, rng, it + 1, cfg)
    finally:
        if loss_file is not None:
            loss_file.close()
    fmt = extract_format(models, cfg)
    fmt.training_curve = curve
    if out_path is not None:
        from . import constellation as const_mod

        for c, const in enumerate(fmt.constellations):
            const_mod.save(const, out_path / f"learned_channel{c}.const")
        save_checkpoint(out_path / "final.npz", models, adam_state, rng, cfg.max_iters, cfg)
    return fmt, models
