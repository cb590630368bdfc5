"""One-step maps and trajectory generation for Euler-Maruyama and Milstein.

Noise is counter-based: each replica owns a Philox stream keyed by
``(master_seed, replica_index)``, so chains can run on any worker in any
order and reproduce bit-for-bit.  Values are generated per step (or in
blocks, which yields the same sequence) and never stored globally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.random import Generator, Philox

from . import _kernels
from .errors import InvalidParams, NonFiniteEvaluation
from .model import SdeModel

_MASK64 = 0xFFFFFFFFFFFFFFFF


class NoiseStream:
    """I.i.d. standard normal vectors keyed by (master_seed, replica_index).

    The k-th draw is fully determined by the key pair; block size does not
    change the sequence.  Distinct replica indices give statistically
    independent streams (distinct Philox keys).
    """

    def __init__(self, master_seed: int, replica_index: int, dim: int = 1):
        self.master_seed = int(master_seed)
        self.replica_index = int(replica_index)
        self.dim = int(dim)
        self._gen = Generator(
            Philox(key=[self.master_seed & _MASK64, self.replica_index & _MASK64])
        )

    @classmethod
    def _from_generator(cls, master_seed, replica_index, gen, dim=1):
        """Wrap a factory-produced Generator (same stream, cheaper setup)."""
        stream = cls.__new__(cls)
        stream.master_seed = int(master_seed)
        stream.replica_index = int(replica_index)
        stream.dim = int(dim)
        stream._gen = gen
        return stream

    def normals(self, n: int) -> np.ndarray:
        """Next n normal draws: shape (n,) when dim == 1, else (n, dim)."""
        if self.dim == 1:
            return self._gen.standard_normal(n)
        return self._gen.standard_normal((n, self.dim))

    def normal(self) -> np.ndarray:
        """Next single normal vector, shape (dim,)."""
        return self._gen.standard_normal(self.dim)


class NoiseStreamFactory:
    """Cheap per-replica Generator construction via Philox state reuse.

    ``generator(i)`` yields the exact stream of ``NoiseStream(master_seed, i)``
    but ~10x faster to set up.  Generators alias one bit generator, so each
    must be fully consumed before requesting the next; use one factory per
    worker thread.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed) & _MASK64
        self._philox = Philox(key=[self.master_seed, 0])
        self._state = self._philox.state

    def generator(self, replica_index: int) -> Generator:
        st = self._state
        st["state"]["key"][1] = int(replica_index) & _MASK64
        st["state"]["counter"][:] = 0
        st["buffer_pos"] = 4
        self._philox.state = st
        return Generator(self._philox)


@dataclass(frozen=True)
class InitialState:
    """Either a fixed point or an isotropic Gaussian sampler for theta_0."""

    kind: str = "point"  # "point" | "gauss"
    value: tuple = (0.0,)
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if self.kind not in ("point", "gauss"):
            raise InvalidParams(f"initial_state kind must be point|gauss, got {self.kind!r}")
        if self.kind == "gauss" and self.std < 0.0:
            raise InvalidParams("initial_state std must be nonnegative")

    def draw(self, noise: NoiseStream, dim: int) -> np.ndarray:
        """Resolve theta_0; a gauss sampler consumes one vector from the stream."""
        if self.kind == "point":
            v = np.asarray(self.value, dtype=float).reshape(-1)
            if v.size == 1 and dim > 1:
                v = np.full(dim, v[0])
            if v.size != dim:
                raise InvalidParams(
                    f"initial_state has dimension {v.size}, model has {dim}"
                )
            return v.copy()
        z = np.asarray(noise.normal(), dtype=float).reshape(-1)[:dim]
        return self.mean + self.std * z


@dataclass(frozen=True)
class ChainConfig:
    """Step size, step count (default floor(eta^-2)) and initial condition."""

    eta: float
    steps: Optional[int] = None
    initial_state: InitialState = field(default_factory=InitialState)

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise InvalidParams(f"eta must lie in (0, 1), got {self.eta}")
        if self.steps is not None and self.steps < 0:
            raise InvalidParams(f"steps must be nonnegative, got {self.steps}")

    @property
    def m(self) -> int:
        if self.steps is not None:
            return int(self.steps)
        # floor of eta^-2 with a guard against representation error
        # (0.05**-2 evaluates to 399.99999...; the intended count is 400)
        return int(math.floor(self.eta**-2 + 1e-9))


# ---------------------------------------------------------------------------
# one-step maps
# ---------------------------------------------------------------------------


def em_step(model: SdeModel, theta: np.ndarray, xi: np.ndarray, eta: float) -> np.ndarray:
    """theta + eta b(theta) + sqrt(eta) sigma(theta) xi."""
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    out = theta + eta * model.drift(theta) + math.sqrt(eta) * (
        model.diffusion(theta) @ xi
    )
    if not np.all(np.isfinite(out)):
        raise NonFiniteEvaluation("em_step produced a non-finite state")
    return out


def milstein_correction(model: SdeModel, theta: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Centered quadratic-in-noise correction term.

    Returns the double sum over sigma-columns contracted with the directional
    derivative of sigma, minus its expectation over xi; in one dimension this
    is sigma(theta) sigma'(theta) (xi^2 - 1).  ``xi`` may carry leading batch
    axes.
    """
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    sig = model.diffusion(theta)
    dsig = model.diffusion_gradient(theta)
    # M[i, k, j] = sum_l dsig[i, k, l] sigma[l, j]
    m_tensor = np.einsum("ikl,lj->ikj", dsig, sig)
    quad = np.einsum("ikj,...k,...j->...i", m_tensor, xi, xi)
    mean = np.einsum("ijj->i", m_tensor)
    out = quad - mean
    if not np.all(np.isfinite(out)):
        raise NonFiniteEvaluation("milstein_correction produced non-finite values")
    return out


def milstein_step(model: SdeModel, theta: np.ndarray, xi: np.ndarray, eta: float) -> np.ndarray:
    """Euler-Maruyama step plus (eta/2) times the Milstein correction."""
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    out = (
        theta
        + eta * model.drift(theta)
        + math.sqrt(eta) * (model.diffusion(theta) @ xi)
        + 0.5 * eta * milstein_correction(model, theta, xi)
    )
    if not np.all(np.isfinite(out)):
        raise NonFiniteEvaluation("milstein_step produced a non-finite state")
    return out


# ---------------------------------------------------------------------------
# trajectory generation
# ---------------------------------------------------------------------------

_NOISE_BLOCK = 1 << 20


def simulate_chain(
    model: SdeModel,
    config: ChainConfig,
    noise: NoiseStream,
    observer: Optional[Callable] = None,
    scheme: str = "milstein",
) -> np.ndarray:
    """Drive the chain for config.m steps and return the final state.

    ``observer(k, theta_k, xi_{k+1}, theta_{k+1})`` is invoked per step when
    given; nothing is stored otherwise.  With no observer, a 1-D builtin model
    runs through the compiled kernel (identical stream consumption, identical
    states up to floating-point-equal arithmetic).
    """
    if scheme not in ("milstein", "em"):
        raise InvalidParams(f"scheme must be milstein|em, got {scheme!r}")
    d = model.dimension
    theta = config.initial_state.draw(noise, d)
    m = config.m
    if m == 0:
        return theta

    use_milstein = scheme == "milstein"
    if observer is None and model.has_fast_kernel:
        th = float(theta[0])
        params = model.kernel_param_array()
        done = 0
        while done < m:
            block = min(_NOISE_BLOCK, m - done)
            xi = noise.normals(block)
            th, err_step = _kernels.final_state_1d(
                model.kernel_code, params, th, config.eta, xi, use_milstein
            )
            if err_step >= 0:
                raise NonFiniteEvaluation(
                    f"chain diverged at step {done + err_step}", step=done + err_step
                )
            done += block
        return np.array([th])

    step = milstein_step if use_milstein else em_step
    for k in range(m):
        xi = noise.normal()
        try:
            theta_next = step(model, theta, xi, config.eta)
        except NonFiniteEvaluation as exc:
            raise NonFiniteEvaluation(f"chain diverged at step {k}", step=k) from exc
        if observer is not None:
            observer(k, theta, xi, theta_next)
        theta = theta_next
    return theta
