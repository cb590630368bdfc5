"""Single-pass accumulation of per-chain invariant-measure statistics.

One streaming pass over a chain of m = floor(eta^-2) steps produces:

* pi_hat  -- time average of h along the chain;
* y       -- time average of ||sigma^T grad f_h||^2 (model-based variance);
* v       -- increment-based variance: the squared projection of the
             de-drifted, de-corrected increment on grad f_h, divided by eta;
* h_eta   -- the martingale part, -eta * sum <grad f_h, sigma xi>;
* r_eta   -- remainder: eta^{-1/2}(pi_hat - pi(h)) - h_eta;
* w, s    -- the centered scaled average normalized by sqrt(y) / sqrt(v).

pi(h) always comes from the quadrature oracle, never from a plug-in chain
estimate.  grad f_h is evaluated by monotone-cubic interpolation of the
Stein grid with clamped extrapolation; chains that leave the grid on more
than 0.1% of steps abort with StateOutsideGrid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    EmptyReplicaSet,
    InsufficientEtaGrid,
    NonFiniteEvaluation,
    NotOneDimensional,
    StateOutsideGrid,
    ZeroNormalization,
)
from .model import SdeModel
from .quadrature import SteinSolution
from .scheme import ChainConfig, InitialState, NoiseStream, NoiseStreamFactory

CLAMP_BUDGET = 1e-3

CSV_COLUMNS = (
    "eta", "m", "replica", "pi_hat", "y", "v", "h_eta", "r_eta", "w", "s",
    "clamped_steps",
)


@dataclass(frozen=True)
class ChainStats:
    eta: float
    m: int
    replica: int
    pi_hat: float
    y: float
    v: float
    h_eta: float
    r_eta: float
    w: float
    s: float
    clamped_steps: int
    # not part of the CSV row: cross-check and auxiliary statistics
    v_noise: float = float("nan")
    b_energy: float = float("nan")
    theta_final: float = float("nan")

    @property
    def centered_scaled(self) -> float:
        """eta^{-1/2}(pi_hat - pi(h)) recovered from the martingale split."""
        return self.h_eta + self.r_eta

    @property
    def v_identity_gap(self) -> float:
        """Relative gap between increment-based and noise-based v."""
        scale = max(abs(self.v), abs(self.v_noise), 1e-300)
        return abs(self.v - self.v_noise) / scale

    def csv_row(self) -> tuple:
        return (
            self.eta, self.m, self.replica, self.pi_hat, self.y, self.v,
            self.h_eta, self.r_eta, self.w, self.s, self.clamped_steps,
        )


def _ppoly_scalar(tables, x):
    x0, dx, ncell, coef = tables[0], tables[1], tables[2], tables[3]
    j = int((x - x0) / dx)
    j = min(max(j, 0), ncell - 1)
    t = x - (x0 + j * dx)
    return ((coef[0, j] * t + coef[1, j]) * t + coef[2, j]) * t + coef[3, j]


def _slow_chain_stats(model, stein, eta, m, theta0, xi, use_milstein):
    """Reference implementation mirroring the compiled kernel semantics."""
    x0, dx, ncell, c_h, c_fp = stein.interp_tables()
    xlo, xhi = x0, x0 + ncell * dx
    drift = model.scalar_drift
    sigma = model.scalar_diffusion
    dsigma = model.scalar_diffusion_gradient
    if drift is None or sigma is None:
        raise NotOneDimensional(
            f"model {model.name!r} lacks scalar functions for the 1-D estimator"
        )
    sqeta = math.sqrt(eta)
    th = float(theta0)
    sums = np.zeros(6)
    comp = np.zeros(6)
    clamped = 0

    def kadd(i, val):
        y = val - comp[i]
        t = sums[i] + y
        comp[i] = (t - sums[i]) - y
        sums[i] = t

    for k in range(m):
        x = th
        if x < xlo:
            x = xlo
            clamped += 1
        elif x > xhi:
            x = xhi
            clamped += 1
        hv = _ppoly_scalar((x0, dx, ncell, c_h), x)
        fp = _ppoly_scalar((x0, dx, ncell, c_fp), x)
        b = float(drift(np.float64(th)))
        s = float(sigma(np.float64(th)))
        z = xi[k]
        if use_milstein:
            corr = s * float(dsigma(np.float64(th))) * (z * z - 1.0)
        else:
            corr = 0.0
        th_next = th + eta * b + sqeta * s * z + 0.5 * eta * corr
        if not math.isfinite(th_next):
            raise NonFiniteEvaluation(f"chain diverged at step {k}", step=k)
        kadd(0, hv)
        g = s * fp
        kadd(1, g * g)
        inc = (th_next - th - eta * b - 0.5 * eta * corr) * fp
        kadd(2, inc * inc)
        w = fp * s * z
        kadd(3, w * w)
        kadd(4, w)
        kadd(5, b * b)
        th = th_next
    return sums[0], sums[1], sums[2], sums[3], sums[4], sums[5], clamped, th


def run_chain_stats(
    model: SdeModel,
    stein: SteinSolution,
    config: ChainConfig,
    noise: NoiseStream,
    scheme: str = "milstein",
    replica: int = 0,
) -> ChainStats:
    """Run one chain and accumulate all statistics in a single streaming pass."""
    if model.dimension != 1:
        raise NotOneDimensional("chain statistics need the 1-D Stein solution")
    eta = config.eta
    m = config.m
    if m < 1:
        raise ZeroNormalization("empty chain: m = 0 leaves all statistics undefined")
    theta0 = float(config.initial_state.draw(noise, 1)[0])
    use_milstein = scheme == "milstein"

    if model.has_fast_kernel:
        x0, dx, ncell, c_h, c_fp = stein.interp_tables()
        xi = noise.normals(m)
        out = _kernels.chain_stats_1d(
            model.kernel_code, model.kernel_param_array(), theta0, eta, xi,
            use_milstein, x0, dx, ncell, c_h, c_fp,
        )
        s_h, s_y, s_vi, s_vn, s_np, s_b, clamped, th, err = out
        if err >= 0:
            raise NonFiniteEvaluation(f"chain diverged at step {err}", step=int(err))
    else:
        xi = noise.normals(m)
        s_h, s_y, s_vi, s_vn, s_np, s_b, clamped, th = _slow_chain_stats(
            model, stein, eta, m, theta0, xi, use_milstein
        )

    return finalize_stats(
        eta, m, replica, stein.pi_h, s_h, s_y, s_vi, s_vn, s_np, s_b, clamped, th
    )


def finalize_stats(eta, m, replica, pi_h, s_h, s_y, s_vi, s_vn, s_np, s_b, clamped, th):
    """Turn raw per-chain sums into a ChainStats, enforcing the error contracts."""
    if clamped > CLAMP_BUDGET * m:
        raise StateOutsideGrid(
            f"{int(clamped)} of {m} steps left the Stein grid (> {CLAMP_BUDGET:.1%})",
            clamped=int(clamped),
            steps=m,
        )
    pi_hat = s_h / m
    y = s_y / m
    v = s_vi / (eta * m)
    v_noise = s_vn / m
    h_eta = -eta * s_np
    centered = (pi_hat - pi_h) / math.sqrt(eta)
    r_eta = centered - h_eta
    # degenerate normalization: y/v at or below the floating-point noise
    # floor of the Stein solve (h - pi(h) numerically zero, e.g. constant h)
    floor = (1e-13 * max(1.0, abs(pi_h))) ** 2
    if y <= floor or v <= floor:
        raise ZeroNormalization(
            f"variance estimate vanished (y={y!r}, v={v!r}); "
            "W and S are undefined for this observable"
        )
    return ChainStats(
        eta=eta,
        m=m,
        replica=replica,
        pi_hat=float(pi_hat),
        y=float(y),
        v=float(v),
        h_eta=float(h_eta),
        r_eta=float(r_eta),
        w=float(centered / math.sqrt(y)),
        s=float(centered / math.sqrt(v)),
        clamped_steps=int(clamped),
        v_noise=float(v_noise),
        b_energy=float(eta * s_b),
        theta_final=float(th),
    )


@dataclass(frozen=True)
class ResidualScaling:
    etas: tuple
    medians: tuple
    slope: float
    replicas: int


def decomposition_residual_scaling(
    model: SdeModel,
    stein: SteinSolution,
    etas: Sequence[float],
    replicas: int,
    master_seed: int,
    scheme: str = "milstein",
    initial_state=None,
) -> ResidualScaling:
    """Median |r_eta| per eta and the log-log slope against eta.

    Needs at least three eta values spanning a 4x ratio; replica i of every
    eta uses the stream (master_seed, i), so the per-eta medians are coupled
    but each is an independent-replica median.
    """
    etas = tuple(float(e) for e in etas)
    if len(etas) < 3 or max(etas) < 4.0 * min(etas):
        raise InsufficientEtaGrid(
            f"need >= 3 eta values spanning >= 4x, got {list(etas)}"
        )
    if replicas < 1:
        raise EmptyReplicaSet("replicas must be >= 1")
    init = initial_state if initial_state is not None else InitialState()
    factory = NoiseStreamFactory(master_seed)
    medians = []
    for eta in etas:
        config = ChainConfig(eta=eta, initial_state=init)
        vals = np.empty(replicas)
        for i in range(replicas):
            stream = NoiseStream._from_generator(master_seed, i, factory.generator(i))
            stats = run_chain_stats(model, stein, config, stream, scheme=scheme, replica=i)
            vals[i] = abs(stats.r_eta)
        medians.append(float(np.median(vals)))
    slope = float(np.polyfit(np.log(etas), np.log(medians), 1)[0])
    return ResidualScaling(etas=etas, medians=tuple(medians), slope=slope, replicas=replicas)
