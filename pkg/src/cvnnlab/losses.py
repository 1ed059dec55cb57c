"""Adversarial, feature-matching, and reconstruction loss formulas, plus the
kernel-density Jensen-Shannon divergence used to score generated samples.

Every loss has a tape form (``t_`` prefix, differentiable) and a plain
float form that evaluates the same graph on a scratch tape, so there is a
single source of truth for each formula. Losses average over the batch and
sum over sub-discriminators and layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autograd import CVar, Tape, Var, absolute, add, mean, mul, relu, softplus, sub
from .ctensor import CTensor, DomainError


@dataclass(frozen=True)
class LossWeights:
    mel: float = 45.0
    mpd: float = 1.0
    cmrd: float = 0.1

    def __post_init__(self):
        if min(self.mel, self.mpd, self.cmrd) < 0:
            raise ValueError("loss weights must be nonnegative")


def _as_var_list(tape: Tape, scores) -> list[Var]:
    if isinstance(scores, Var):
        return [scores]
    if isinstance(scores, np.ndarray) or np.isscalar(scores):
        return [tape.leaf(np.atleast_1d(np.asarray(scores, dtype=np.float64)))]
    return [s if isinstance(s, Var)
            else tape.leaf(np.atleast_1d(np.asarray(s, dtype=np.float64)))
            for s in scores]


def _as_cvar_list(tape: Tape, scores) -> list[CVar]:
    if isinstance(scores, CVar):
        return [scores]
    if isinstance(scores, CTensor):
        return [tape.complex_leaf(scores.reshape((-1,)))]
    return [s if isinstance(s, CVar) else tape.complex_leaf(s.reshape((-1,)))
            for s in scores]


def _margin_real(s: Var) -> Var:
    # mean over samples of max(0, 1 - s)
    return mean(relu(sub(1.0, s)))


def _margin_fake(s: Var) -> Var:
    return mean(relu(add(1.0, s)))


# ---------------------------------------------------------------------------
# hinge losses


def t_hinge_d(tape: Tape, real_scores, fake_scores) -> Var:
    reals = _as_var_list(tape, real_scores)
    fakes = _as_var_list(tape, fake_scores)
    total = None
    for r, f in zip(reals, fakes):
        term = add(_margin_real(r), _margin_fake(f))
        total = term if total is None else add(total, term)
    return total


def t_hinge_d_complex(tape: Tape, real_scores, fake_scores) -> Var:
    """Hinge applied independently to the real and imaginary components,
    halved, summed over sub-discriminators."""
    reals = _as_cvar_list(tape, real_scores)
    fakes = _as_cvar_list(tape, fake_scores)
    total = None
    for r, f in zip(reals, fakes):
        real_term = mul(add(_margin_real(r.re), _margin_real(r.im)), 0.5)
        fake_term = mul(add(_margin_fake(f.re), _margin_fake(f.im)), 0.5)
        term = add(real_term, fake_term)
        total = term if total is None else add(total, term)
    return total


def t_hinge_g(tape: Tape, fake_scores) -> Var:
    fakes = _as_var_list(tape, fake_scores)
    total = None
    for f in fakes:
        term = _margin_real(f)
        total = term if total is None else add(total, term)
    return total


def t_hinge_g_complex(tape: Tape, fake_scores) -> Var:
    fakes = _as_cvar_list(tape, fake_scores)
    total = None
    for f in fakes:
        term = mul(add(_margin_real(f.re), _margin_real(f.im)), 0.5)
        total = term if total is None else add(total, term)
    return total


# ---------------------------------------------------------------------------
# feature matching


def _nested(feats):
    """Normalize to a list of sub-discriminators, each a list of layers."""
    if not isinstance(feats, (list, tuple)):
        return [[feats]]
    if feats and not isinstance(feats[0], (list, tuple)):
        return [list(feats)]
    return [list(layer) for layer in feats]


def t_feature_matching(tape: Tape, real_feats, fake_feats) -> Var:
    total = None
    for rsub, fsub in zip(_nested(real_feats), _nested(fake_feats)):
        for r, f in zip(rsub, fsub):
            r = r if isinstance(r, Var) else tape.leaf(r)
            f = f if isinstance(f, Var) else tape.leaf(f)
            term = mean(absolute(sub(r, f)))
            total = term if total is None else add(total, term)
    return total


def t_feature_matching_complex(tape: Tape, real_feats, fake_feats) -> Var:
    total = None
    for rsub, fsub in zip(_nested(real_feats), _nested(fake_feats)):
        for r, f in zip(rsub, fsub):
            r = r if isinstance(r, CVar) else tape.complex_leaf(r)
            f = f if isinstance(f, CVar) else tape.complex_leaf(f)
            term = mul(add(mean(absolute(sub(r.re, f.re))),
                           mean(absolute(sub(r.im, f.im)))), 0.5)
            total = term if total is None else add(total, term)
    return total


def t_total_generator_loss(tape, mel_l1, g_mpd, fm_mpd, g_cmrd, fm_cmrd,
                           w: LossWeights = LossWeights()) -> Var:
    lift = lambda x: x if isinstance(x, Var) else tape.leaf(np.asarray(x, dtype=np.float64))
    mel_term = mul(lift(mel_l1), w.mel)
    mpd_term = mul(add(lift(g_mpd), lift(fm_mpd)), w.mpd)
    cmrd_term = mul(add(lift(g_cmrd), lift(fm_cmrd)), w.cmrd)
    return add(add(mel_term, mpd_term), cmrd_term)


def t_bce_with_logits(logits: Var, target: float) -> Var:
    """Binary cross-entropy from raw logits, computed stably."""
    return mean(sub(softplus(logits), mul(logits, float(target))))


def t_l1(a: Var, b: Var) -> Var:
    return mean(absolute(sub(a, b)))


# ---------------------------------------------------------------------------
# float-returning wrappers (same formulas on a scratch tape)


def _scalar(v: Var) -> float:
    return float(v.value)


def hinge_d(real_scores, fake_scores) -> float:
    t = Tape()
    return _scalar(t_hinge_d(t, real_scores, fake_scores))


def hinge_d_complex(real_scores, fake_scores) -> float:
    t = Tape()
    return _scalar(t_hinge_d_complex(t, real_scores, fake_scores))


def hinge_g(fake_scores) -> float:
    t = Tape()
    return _scalar(t_hinge_g(t, fake_scores))


def hinge_g_complex(fake_scores) -> float:
    t = Tape()
    return _scalar(t_hinge_g_complex(t, fake_scores))


def feature_matching(real_feats, fake_feats) -> float:
    t = Tape()
    return _scalar(t_feature_matching(t, real_feats, fake_feats))


def feature_matching_complex(real_feats, fake_feats) -> float:
    t = Tape()
    return _scalar(t_feature_matching_complex(t, real_feats, fake_feats))


def total_generator_loss(mel_l1, g_mpd, fm_mpd, g_cmrd, fm_cmrd,
                         w: LossWeights = LossWeights()) -> float:
    t = Tape()
    return _scalar(t_total_generator_loss(t, mel_l1, g_mpd, fm_mpd, g_cmrd, fm_cmrd, w))


# ---------------------------------------------------------------------------
# Jensen-Shannon divergence via Gaussian kernel density estimates

LN2 = math.log(2.0)


@dataclass(frozen=True)
class KdeConfig:
    bandwidth: str | float = "scott"
    grid_size: int = 512
    bounds: tuple[float, float] | None = None

    def __post_init__(self):
        if self.grid_size < 64:
            raise ValueError("KDE grid size must be >= 64")
        if isinstance(self.bandwidth, (int, float)) and self.bandwidth <= 0:
            raise ValueError("fixed bandwidth must be positive")


def _bandwidth(samples: np.ndarray, rule) -> float:
    if isinstance(rule, (int, float)):
        return float(rule)
    n = samples.shape[0]
    sigma = samples.std(ddof=1)
    if sigma == 0.0:
        raise DomainError("zero-variance sample set; KDE bandwidth undefined")
    if rule == "scott":
        return sigma * n ** (-1.0 / 5.0)
    if rule == "silverman":
        return sigma * (4.0 / (3.0 * n)) ** (1.0 / 5.0)
    raise ValueError(f"unknown bandwidth rule {rule!r}")


def _kde_on_grid(samples: np.ndarray, grid: np.ndarray, h: float) -> np.ndarray:
    d = (grid[:, None] - samples[None, :]) / h
    dens = np.exp(-0.5 * d * d).sum(axis=1)
    total = dens.sum()
    if total <= 0:
        raise DomainError("KDE mass underflowed on the evaluation grid")
    return dens / total


def jsd_1d(samples_a, samples_b, cfg: KdeConfig = KdeConfig()) -> float:
    """JSD between two sample sets via Gaussian KDEs evaluated on a shared
    grid and normalized to probability vectors. Natural log; the result
    lies in [0, ln 2]."""
    a = np.asarray(samples_a, dtype=np.float64).ravel()
    b = np.asarray(samples_b, dtype=np.float64).ravel()
    if a.size < 100 or b.size < 100:
        raise ValueError("jsd_1d needs at least 100 samples per side")
    ha = _bandwidth(a, cfg.bandwidth)
    hb = _bandwidth(b, cfg.bandwidth)
    if cfg.bounds is not None:
        lo, hi = cfg.bounds
    else:
        h = max(ha, hb)
        lo = min(a.min(), b.min()) - 3.0 * h
        hi = max(a.max(), b.max()) + 3.0 * h
    grid = np.linspace(lo, hi, cfg.grid_size)
    p = _kde_on_grid(a, grid, ha)
    q = _kde_on_grid(b, grid, hb)
    m = 0.5 * (p + q)

    def kl(u, v):
        mask = u > 0
        return float(np.sum(u[mask] * np.log(u[mask] / v[mask])))

    return max(0.0, 0.5 * kl(p, m) + 0.5 * kl(q, m))
