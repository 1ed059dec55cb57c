"""Desk-scale experiments: a complex-vs-real GAN on a synthetic spiral
distribution, and a tiny mel-to-waveform overfit run that exercises the
full layer/signal/loss stack.

The GAN pits a complex-valued MLP against a real-valued twin of doubled
hidden width (so both carry the same representational width per layer) under
identical optimization hyperparameters, and scores both by the Jensen-
Shannon divergence between generated and target magnitude/phase marginals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .autograd import (
    Adam,
    CVar,
    Tape,
    Var,
    add,
    backward,
    detach,
    mean,
    reshape,
    transpose,
)
from .ctensor import CTensor
from .layers import (
    Backend,
    ComplexConv1d,
    ComplexLayerNorm,
    ComplexLinear,
    PhaseQuantizer,
    RealLinear,
    split_gelu,
    split_leaky_relu,
)
from .losses import KdeConfig, jsd_1d, t_bce_with_logits, t_l1
from .signal import MelFilterbank, StftConfig, istft_t, log_mel, log_mel_t, mr_stft_error

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# synthetic target distribution


@dataclass(frozen=True)
class SpiralConfig:
    """Archimedean spiral ``z(t) = (a + b t) e^{it}`` with Gaussian noise on
    both components; ``t`` is uniform on [0, 2*pi*turns]."""

    n_samples: int = 10000
    turns: float = 2.0
    growth: float = 0.16
    base_radius: float = 0.0
    noise: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1000:
            raise ValueError("spiral target needs at least 1000 samples")
        eff = self.noise_sigma
        if eff < 0:
            raise ValueError("noise must be nonnegative")

    @property
    def max_radius(self) -> float:
        return self.base_radius + self.growth * 2.0 * math.pi * self.turns

    @property
    def noise_sigma(self) -> float:
        if self.noise is not None:
            return self.noise
        return 0.05 * self.max_radius


def spiral_point(cfg: SpiralConfig, t: float) -> complex:
    r = cfg.base_radius + cfg.growth * t
    return r * complex(math.cos(t), math.sin(t))


def sample_target(cfg: SpiralConfig) -> CTensor:
    """Deterministic draw of the target distribution for a given seed."""
    rng = np.random.default_rng(cfg.seed)
    t = rng.uniform(0.0, 2.0 * math.pi * cfg.turns, cfg.n_samples)
    r = cfg.base_radius + cfg.growth * t
    re = r * np.cos(t)
    im = r * np.sin(t)
    sigma = cfg.noise_sigma
    if sigma > 0:
        re = re + sigma * rng.normal(size=cfg.n_samples)
        im = im + sigma * rng.normal(size=cfg.n_samples)
    return CTensor(re, im)


# ---------------------------------------------------------------------------
# toy GAN


@dataclass(frozen=True)
class GanConfig:
    mode: str = "cvnn"  # "cvnn" | "rvnn"
    hidden_dim: int = 128
    depth: int = 4
    activation: str = "leaky_relu"
    act_slope: float = 0.2
    latent_dim: int = 1  # complex units for cvnn, real units are 2x
    steps: int = 2000
    lr: float = 2e-4
    lr_schedule: str = "cosine"
    batch_size: int = 256
    betas: tuple[float, float] = (0.8, 0.9)
    seed: int = 0
    backend: Backend = Backend.BLOCK

    def __post_init__(self):
        if self.mode not in ("cvnn", "rvnn"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr schedule {self.lr_schedule!r}")

    @classmethod
    def cvnn(cls, **kw) -> "GanConfig":
        return cls(mode="cvnn", hidden_dim=kw.pop("hidden_dim", 128), **kw)

    @classmethod
    def rvnn(cls, **kw) -> "GanConfig":
        # real twin gets twice the hidden width of the 128-wide complex net
        return cls(mode="rvnn", hidden_dim=kw.pop("hidden_dim", 256), **kw)

    def optimization_settings(self) -> dict:
        """The hyperparameters that must match between the two model
        families for a fair comparison."""
        return {
            "depth": self.depth,
            "activation": self.activation,
            "act_slope": self.act_slope,
            "steps": self.steps,
            "lr": self.lr,
            "lr_schedule": self.lr_schedule,
            "batch_size": self.batch_size,
            "betas": self.betas,
        }


class _ComplexMlp:
    def __init__(self, widths, slope, backend, rng, name):
        self.slope = slope
        self.layers = [
            ComplexLinear(widths[i], widths[i + 1], backend=backend, rng=rng,
                          name=f"{name}.l{i}")
            for i in range(len(widths) - 1)
        ]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, tape: Tape, z: CVar) -> CVar:
        for i, layer in enumerate(self.layers):
            z = layer.forward(tape, z)
            if i < len(self.layers) - 1:
                z = split_leaky_relu(z, self.slope)
        return z


class _RealMlp:
    def __init__(self, widths, slope, rng, name):
        self.slope = slope
        self.layers = [
            RealLinear(widths[i], widths[i + 1], rng=rng, name=f"{name}.l{i}")
            for i in range(len(widths) - 1)
        ]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, tape: Tape, x: Var) -> Var:
        from .autograd import leaky_relu

        for i, layer in enumerate(self.layers):
            x = layer.forward(tape, x)
            if i < len(self.layers) - 1:
                x = leaky_relu(x, self.slope)
        return x


def _widths(io_dim: int, hidden: int, depth: int) -> list[int]:
    return [io_dim] + [hidden] * (depth - 1) + [io_dim]


def build_generator(cfg: GanConfig, rng) -> object:
    if cfg.mode == "cvnn":
        return _ComplexMlp(_widths(cfg.latent_dim, cfg.hidden_dim, cfg.depth),
                           cfg.act_slope, cfg.backend, rng, "gen")
    return _RealMlp(_widths(2 * cfg.latent_dim, cfg.hidden_dim, cfg.depth),
                    cfg.act_slope, rng, "gen")


def build_discriminator(cfg: GanConfig, rng) -> object:
    if cfg.mode == "cvnn":
        return _ComplexMlp(_widths(1, cfg.hidden_dim, cfg.depth),
                           cfg.act_slope, cfg.backend, rng, "disc")
    return _RealMlp(_widths(2, cfg.hidden_dim, cfg.depth), cfg.act_slope, rng, "disc")


def parameter_bytes(params) -> int:
    return sum(p.nbytes() for p in params)


@dataclass
class RunReport:
    mode: str
    seed: int
    jsd_mag: float
    jsd_phase: float
    samples: CTensor
    d_loss_curve: np.ndarray
    g_loss_curve: np.ndarray
    failed: bool
    config: GanConfig

    def __post_init__(self):
        if not self.failed:
            for v in (self.jsd_mag, self.jsd_phase):
                if not (0.0 <= v <= LN2 + 1e-9):
                    raise ValueError(f"JSD {v} outside [0, ln 2]")

    def summary_dict(self) -> dict:
        def clean(v):
            return float(v) if v is not None and math.isfinite(v) else None

        return {
            "mode": self.mode,
            "seed": self.seed,
            "jsd_mag": clean(self.jsd_mag),
            "jsd_phase": clean(self.jsd_phase),
            "failed": self.failed,
            "final_d_loss": clean(self.d_loss_curve[-1]) if len(self.d_loss_curve) else None,
            "final_g_loss": clean(self.g_loss_curve[-1]) if len(self.g_loss_curve) else None,
        }


class _GanHarness:
    """Shared mechanics for the two model families."""

    def __init__(self, cfg: GanConfig, target: CTensor):
        self.cfg = cfg
        self.target = target
        self.rng = np.random.default_rng(cfg.seed)
        self.gen = build_generator(cfg, self.rng)
        self.disc = build_discriminator(cfg, self.rng)
        self.opt_g = Adam(self.gen.parameters(), lr=cfg.lr, betas=cfg.betas)
        self.opt_d = Adam(self.disc.parameters(), lr=cfg.lr, betas=cfg.betas)
        self._target_mat = np.stack([target.re, target.im], axis=1)
        self._step = 0

    def _current_lr(self) -> float:
        if self.cfg.lr_schedule == "constant" or self.cfg.steps <= 1:
            return self.cfg.lr
        frac = self._step / max(self.cfg.steps - 1, 1)
        return self.cfg.lr * 0.5 * (1.0 + math.cos(math.pi * frac))

    def _latent(self, n):
        return self.rng.normal(size=(n, 2 * self.cfg.latent_dim))

    def _real_batch(self, n):
        idx = self.rng.integers(0, self.target.size, size=n)
        return self._target_mat[idx]

    def _gen_forward(self, tape, lat):
        if self.cfg.mode == "cvnn":
            z = CVar(tape.leaf(lat[:, :1]), tape.leaf(lat[:, 1:]))
            return self.gen.forward(tape, z)
        return self.gen.forward(tape, tape.leaf(lat))

    def _disc_logit(self, tape, value):
        """Reduce the discriminator output to a real logit: the real part
        (complex net) or channel 0 (real net)."""
        if self.cfg.mode == "cvnn":
            out = self.disc.forward(tape, value)
            return out.re
        out = self.disc.forward(tape, value)
        half = out.value.shape[1] // 2

        def bwd(ctx, gs):
            g = np.zeros(ctx)
            g[:, :half] = gs[0]
            return (g,)

        return tape.record("chan0", (out,), (out.value[:, :half],), bwd,
                           out.value.shape)[0]

    def _as_disc_input(self, tape, samples_mat):
        if self.cfg.mode == "cvnn":
            return CVar(tape.leaf(samples_mat[:, :1]), tape.leaf(samples_mat[:, 1:]))
        return tape.leaf(samples_mat)

    def _fake_to_disc_input(self, tape, fake, cut_graph: bool):
        if self.cfg.mode == "cvnn":
            return detach(fake) if cut_graph else fake
        if cut_graph:
            return tape.leaf(fake.value)
        return fake

    def train_step(self):
        cfg = self.cfg
        lr = self._current_lr()
        self.opt_d.lr = lr
        self.opt_g.lr = lr
        self._step += 1
        # discriminator update
        tape = Tape()
        lat = self._latent(cfg.batch_size)
        fake = self._gen_forward(tape, lat)
        s_real = self._disc_logit(tape, self._as_disc_input(tape, self._real_batch(cfg.batch_size)))
        s_fake = self._disc_logit(tape, self._fake_to_disc_input(tape, fake, True))
        d_loss = add(t_bce_with_logits(s_real, 1.0), t_bce_with_logits(s_fake, 0.0))
        backward(tape, d_loss)
        self.opt_d.step()
        # generator update
        tape = Tape()
        fake = self._gen_forward(tape, self._latent(cfg.batch_size))
        s = self._disc_logit(tape, self._fake_to_disc_input(tape, fake, False))
        g_loss = t_bce_with_logits(s, 1.0)
        backward(tape, g_loss)
        self.opt_g.step()
        return float(d_loss.value), float(g_loss.value)

    def generate(self, n) -> CTensor:
        tape = Tape()
        fake = self._gen_forward(tape, self._latent(n))
        if self.cfg.mode == "cvnn":
            return CTensor(fake.re.value[:, 0], fake.im.value[:, 0])
        return CTensor(fake.value[:, 0], fake.value[:, 1])


def train_toy_gan(cfg: GanConfig, target: CTensor,
                  kde: KdeConfig = KdeConfig(), eval_samples: int = 10000) -> RunReport:
    """Train one GAN and report JSD between generated and target magnitude
    and phase marginals. A NaN loss aborts the run and marks it failed."""
    harness = _GanHarness(cfg, target)
    d_curve = np.zeros(cfg.steps)
    g_curve = np.zeros(cfg.steps)
    failed = False
    for step in range(cfg.steps):
        d_loss, g_loss = harness.train_step()
        d_curve[step] = d_loss
        g_curve[step] = g_loss
        if not (math.isfinite(d_loss) and math.isfinite(g_loss)):
            failed = True
            d_curve = d_curve[: step + 1]
            g_curve = g_curve[: step + 1]
            break
    samples = harness.generate(eval_samples)
    if failed:
        return RunReport(cfg.mode, cfg.seed, float("nan"), float("nan"), samples,
                         d_curve, g_curve, True, cfg)
    jsd_mag = jsd_1d(samples.abs(), target.abs(), kde)
    jsd_phase = jsd_1d(samples.phase(), target.phase(), kde)
    return RunReport(cfg.mode, cfg.seed, jsd_mag, jsd_phase, samples,
                     d_curve, g_curve, False, cfg)


def evaluate_jsd(samples: CTensor, target: CTensor,
                 kde: KdeConfig = KdeConfig()) -> tuple[float, float]:
    return (jsd_1d(samples.abs(), target.abs(), kde),
            jsd_1d(samples.phase(), target.phase(), kde))


def _suite_task(args) -> tuple[int, str, RunReport]:
    run_seed, mode, steps, target_seed = args
    target = sample_target(SpiralConfig(seed=target_seed))
    ctor = GanConfig.cvnn if mode == "cvnn" else GanConfig.rvnn
    cfg = ctor(seed=run_seed, steps=steps)
    return run_seed, mode, train_toy_gan(cfg, target)


def run_toygan_suite(n_seeds: int, steps: int | None = None, base_seed: int = 0,
                     workers: int | None = None) -> dict[int, dict[str, RunReport]]:
    """Train both model families for each seed; independent seeds may run in
    parallel processes (pass ``workers=1`` to serialize)."""
    import os
    from concurrent.futures import ProcessPoolExecutor

    if steps is None:
        steps = GanConfig.cvnn().steps
    tasks = [(base_seed + s, mode, steps, base_seed)
             for s in range(n_seeds) for mode in ("cvnn", "rvnn")]
    # the two model families must train under the same optimization settings
    assert (GanConfig.cvnn(steps=steps).optimization_settings()
            == GanConfig.rvnn(steps=steps).optimization_settings())
    results: dict[int, dict[str, RunReport]] = {}
    if workers is None:
        workers = min(2, os.cpu_count() or 1)
    if workers <= 1 or len(tasks) == 1:
        done = map(_suite_task, tasks)
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        done = pool.map(_suite_task, tasks)
    for run_seed, mode, report in done:
        results.setdefault(run_seed - base_seed, {})[mode] = report
    return results


# ---------------------------------------------------------------------------
# mini vocoder overfit smoke test


@dataclass(frozen=True)
class MiniVocoderConfig:
    n_layers: int = 2
    dim: int = 32
    hidden: int = 96
    n_quant: int = 128
    steps: int = 800
    lr: float = 5e-3
    seed: int = 0
    backend: Backend = Backend.BLOCK
    n_fft: int = 1024
    hop: int = 256
    win_length: int = 1024
    n_mels: int = 100
    f_max: float = 12000.0
    sample_rate: int = 24000

    def __post_init__(self):
        if min(self.n_layers, self.dim, self.hidden) <= 0:
            raise ValueError("layer count and dims must be positive")

    def stft_config(self) -> StftConfig:
        return StftConfig(self.n_fft, self.hop, self.win_length)

    def filterbank(self) -> MelFilterbank:
        return MelFilterbank(self.n_mels, self.f_max, self.sample_rate, self.n_fft)


def default_test_signal(cfg: MiniVocoderConfig, duration: float = 1.0) -> np.ndarray:
    """Three-component sine mixture over a faint broadband noise floor.

    The noise floor keeps every mel band above the log floor, so the
    reconstruction loss is informative in all bins; the draw is fixed, so
    the signal is a pure function of the configuration.
    """
    t = np.arange(int(duration * cfg.sample_rate)) / cfg.sample_rate
    comps = ((0.5, 220.0), (0.3, 557.0), (0.2, 1331.0))
    tones = sum(a * np.sin(2.0 * np.pi * f * t) for a, f in comps)
    floor = 0.01 * np.random.default_rng(90210).normal(size=t.shape[0])
    return tones + floor


class MiniVocoder:
    """Log-mel input -> complex conv stem -> phase quantization -> a few
    ConvNeXt-style complex blocks -> projection to spectrogram bins -> iSTFT.

    The block layout (depthwise conv, channel layernorm, pointwise up,
    split GELU, pointwise down, residual) approximates the frame-level
    synthesis backbone at desk scale.
    """

    def __init__(self, cfg: MiniVocoderConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        bk = cfg.backend
        d = cfg.dim
        self.stem = ComplexConv1d(cfg.n_mels, d, 7, padding=3, backend=bk, rng=rng,
                                  name="voc.stem")
        self.pq = PhaseQuantizer(cfg.n_quant)
        self.blocks = []
        for i in range(cfg.n_layers):
            self.blocks.append({
                "dw": ComplexConv1d(d, d, 7, padding=3, groups=d, backend=bk,
                                    rng=rng, name=f"voc.b{i}.dw"),
                "norm": ComplexLayerNorm(d, name=f"voc.b{i}.norm"),
                "pw1": ComplexConv1d(d, cfg.hidden, 1, backend=bk, rng=rng,
                                     name=f"voc.b{i}.pw1"),
                "pw2": ComplexConv1d(cfg.hidden, d, 1, backend=bk, rng=rng,
                                     name=f"voc.b{i}.pw2"),
            })
        self.head = ComplexConv1d(d, cfg.stft_config().bins, 1, backend=bk, rng=rng,
                                  name="voc.head")

    def parameters(self):
        params = self.stem.parameters() + self.head.parameters()
        for blk in self.blocks:
            for key in ("dw", "norm", "pw1", "pw2"):
                params += blk[key].parameters()
        return params

    @staticmethod
    def _norm_channels(tape, norm, z):
        # [1, C, F] -> [F, C], whiten across channels, back
        _, c, f = z.shape
        flat = CVar(transpose(reshape(z.re, (c, f)), (1, 0)),
                    transpose(reshape(z.im, (c, f)), (1, 0)))
        normed = norm.forward(tape, flat)
        return CVar(reshape(transpose(normed.re, (1, 0)), (1, c, f)),
                    reshape(transpose(normed.im, (1, 0)), (1, c, f)))

    def forward(self, tape: Tape, mel: np.ndarray, n_samples: int) -> Var:
        """mel is [frames, n_mels]; returns the synthesized waveform."""
        feats = CVar(tape.leaf(mel.T[None, :, :]),
                     tape.leaf(np.zeros((1,) + mel.T.shape)))
        z = self.stem.forward(tape, feats)
        z = self.pq.forward(tape, z)
        for blk in self.blocks:
            skip = z
            z = blk["dw"].forward(tape, z)
            z = self._norm_channels(tape, blk["norm"], z)
            z = blk["pw1"].forward(tape, z)
            z = split_gelu(z)
            z = blk["pw2"].forward(tape, z)
            z = CVar(add(z.re, skip.re), add(z.im, skip.im))
        spec = self.head.forward(tape, z)
        frames = spec.shape[2]
        bins = spec.shape[1]
        spec2d = CVar(transpose(reshape(spec.re, (bins, frames)), (1, 0)),
                      transpose(reshape(spec.im, (bins, frames)), (1, 0)))
        return istft_t(tape, self.cfg.stft_config(), spec2d, length=n_samples)


@dataclass
class VocoderReport:
    loss_curve: np.ndarray
    initial_loss: float
    final_loss: float
    mr_stft: float
    wave_out: np.ndarray
    failed: bool

    def summary_dict(self) -> dict:
        return {
            "initial_mel_l1": self.initial_loss,
            "final_mel_l1": self.final_loss,
            "reduction": 1.0 - self.final_loss / self.initial_loss
            if self.initial_loss else 0.0,
            "mr_stft": self.mr_stft,
            "failed": self.failed,
            "steps": int(len(self.loss_curve)),
        }


def mini_vocoder_overfit(cfg: MiniVocoderConfig, wave_in: np.ndarray | None = None) -> VocoderReport:
    """Overfit the mini vocoder to a single waveform with a mel-L1 loss.

    A run whose final loss has not decreased from its initial value is
    marked failed.
    """
    if wave_in is None:
        wave_in = default_test_signal(cfg)
    wave_in = np.asarray(wave_in, dtype=np.float64)
    if wave_in.shape[0] < cfg.sample_rate:
        raise ValueError("need at least one second of audio")
    stft_cfg = cfg.stft_config()
    fb = cfg.filterbank()
    mel_in = log_mel(stft_cfg, fb, wave_in)
    model = MiniVocoder(cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)
    losses = np.zeros(max(cfg.steps, 1))
    wave_out = np.zeros_like(wave_in)
    target_mel_const = None
    for step in range(max(cfg.steps, 1)):
        tape = Tape()
        wave_hat = model.forward(tape, mel_in, wave_in.shape[0])
        pred_mel = log_mel_t(tape, stft_cfg, fb, wave_hat)
        if target_mel_const is None:
            target_mel_const = mel_in
        loss = t_l1(pred_mel, tape.leaf(target_mel_const))
        losses[step] = float(loss.value)
        wave_out = wave_hat.value
        if cfg.steps == 0:
            break
        backward(tape, loss)
        opt.step()
    final = losses[-1] if cfg.steps else losses[0]
    failed = bool(cfg.steps > 0 and final >= losses[0])
    return VocoderReport(losses, float(losses[0]), float(final),
                         float(mr_stft_error(wave_in, wave_out)), wave_out, failed)
