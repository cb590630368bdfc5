"""SDE model registry and machine-checkable validation of the standing assumptions.

A model is a drift b, a diffusion matrix sigma, the gradient tensor of sigma,
and a record of declared constants (Lipschitz bound L, dissipativity rate K1
and offset K2, sup norms of sigma and grad sigma, and ||b(0)||).  The declared
constants are author inputs; ``validate_assumptions`` certifies them on a
sampled box and reports worst offenders, it never overwrites them.

All model callables are pure and vectorized over leading batch axes:
``drift`` maps ``(..., d) -> (..., d)``, ``diffusion`` maps
``(..., d) -> (..., d, d)`` and ``diffusion_gradient`` maps
``(..., d) -> (..., d, d, d)`` with entry ``[i, j, l]`` holding
``d sigma_{i,j} / d x_l``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.random import Generator, Philox

from .errors import (
    EmptyGrid,
    InvalidParams,
    NonFiniteEvaluation,
    UnknownModelId,
    UnknownTestFunctionId,
)

# fast-path kernel ids understood by _kernels (1-D builtins only)
KERNEL_OU = 0
KERNEL_TANH1D = 1


@dataclass(frozen=True)
class SdeConstants:
    """Declared model constants; see the module docstring for meaning."""

    L: float
    K1: float
    K2: float
    sigma_sup: float
    grad_sigma_sup: float
    b0_norm: float

    def __post_init__(self):
        if not (self.K1 > 0.0):
            raise InvalidParams(f"K1 must be positive, got {self.K1}")
        if not (self.L > 0.0):
            raise InvalidParams(f"L must be positive, got {self.L}")
        if self.K2 < 0.0:
            raise InvalidParams(f"K2 must be nonnegative, got {self.K2}")


@dataclass(frozen=True)
class SdeModel:
    name: str
    dimension: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    diffusion_gradient: Callable[[np.ndarray], np.ndarray]
    constants: Optional[SdeConstants]
    params: dict = field(default_factory=dict)
    # vectorized elementwise forms for d=1 (used by quadrature and the slow
    # chain path); None for d > 1
    scalar_drift: Optional[Callable] = None
    scalar_diffusion: Optional[Callable] = None
    scalar_diffusion_gradient: Optional[Callable] = None
    # numba fast-path dispatch (builtin 1-D models only)
    kernel_code: Optional[int] = None
    kernel_params: tuple = ()

    @property
    def has_fast_kernel(self) -> bool:
        return self.kernel_code is not None and self.dimension == 1

    def kernel_param_array(self) -> np.ndarray:
        cached = getattr(self, "_kernel_param_cache", None)
        if cached is None:
            cached = np.asarray(self.kernel_params, dtype=np.float64)
            object.__setattr__(self, "_kernel_param_cache", cached)
        return cached


@dataclass(frozen=True)
class TestFunction:
    """A 1-D observable h with analytic first and second derivatives.

    ``value``/``deriv``/``second_deriv`` are vectorized elementwise.
    ``bounded`` records whether h is claimed to lie in C_b^2; unbounded
    choices (such as the identity) are accepted but flagged in reports.
    """

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    second_deriv: Callable[[np.ndarray], np.ndarray]
    bounded: bool
    params: dict = field(default_factory=dict)

    __test__ = False  # keep pytest from collecting the class by its name


# ---------------------------------------------------------------------------
# builtin models
# ---------------------------------------------------------------------------


def _diag_embed(values: np.ndarray) -> np.ndarray:
    """(..., d) -> (..., d, d) diagonal matrices."""
    d = values.shape[-1]
    out = np.zeros(values.shape + (d,), dtype=values.dtype)
    idx = np.arange(d)
    out[..., idx, idx] = values
    return out


def _ou_model(params: dict) -> SdeModel:
    kappa = float(params.get("kappa", 1.0))
    s = float(params.get("s", 1.0))
    if kappa <= 0.0:
        raise InvalidParams(f"ou: kappa must be positive, got {kappa}")
    if s <= 0.0:
        raise InvalidParams(f"ou: s must be positive, got {s}")

    def drift(x):
        return -kappa * np.asarray(x, dtype=float)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.array([[s]]), x.shape[:-1] + (1, 1)).copy()

    def diffusion_gradient(x):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1] + (1, 1, 1))

    return SdeModel(
        name="ou",
        dimension=1,
        drift=drift,
        diffusion=diffusion,
        diffusion_gradient=diffusion_gradient,
        constants=SdeConstants(
            L=kappa, K1=kappa, K2=0.0, sigma_sup=s, grad_sigma_sup=0.0, b0_norm=0.0
        ),
        params={"kappa": kappa, "s": s},
        # dtype-preserving: the Stein solver evaluates these in extended precision
        scalar_drift=lambda x: -kappa * np.asarray(x),
        scalar_diffusion=lambda x: np.full_like(np.asarray(x), s),
        scalar_diffusion_gradient=lambda x: np.zeros_like(np.asarray(x)),
        kernel_code=KERNEL_OU,
        kernel_params=(kappa, s, 0.0, 0.0),
    )


def _tanh1d_params(params: dict):
    kappa = float(params.get("kappa", 1.0))
    c = float(params.get("c", 0.5))
    s0 = float(params.get("s0", 1.0))
    s1 = float(params.get("s1", 0.5))
    if kappa <= 0.0:
        raise InvalidParams(f"tanh1d: kappa must be positive, got {kappa}")
    if c < 0.0 or c >= kappa:
        raise InvalidParams(
            f"tanh1d: need 0 <= c < kappa for dissipativity, got c={c}, kappa={kappa}"
        )
    if s0 <= abs(s1):
        raise InvalidParams(
            f"tanh1d: need s0 > |s1| for positive definiteness, got s0={s0}, s1={s1}"
        )
    return kappa, c, s0, s1


def _tanh1d_constants(kappa, c, s0, s1) -> SdeConstants:
    # |b'| <= kappa + c; |sigma(x)-sigma(y)| <= |s1||x-y| since |tanh'| <= 1;
    # (sin x - sin y)(x - y) <= (x - y)^2 gives K1 = kappa - c with K2 = 0
    return SdeConstants(
        L=max(kappa + c, abs(s1)),
        K1=kappa - c,
        K2=0.0,
        sigma_sup=s0 + abs(s1),
        grad_sigma_sup=abs(s1),
        b0_norm=0.0,
    )


def _tanh1d_model(params: dict) -> SdeModel:
    kappa, c, s0, s1 = _tanh1d_params(params)

    # dtype-preserving (see the ou scalar functions)
    def sdrift(x):
        x = np.asarray(x)
        return -kappa * x + c * np.sin(x)

    def ssigma(x):
        x = np.asarray(x)
        return s0 + s1 * np.tanh(x)

    def sdsigma(x):
        x = np.asarray(x)
        t = np.tanh(x)
        return s1 * (1.0 - t * t)

    def drift(x):
        return sdrift(x)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return ssigma(x)[..., None]

    def diffusion_gradient(x):
        x = np.asarray(x, dtype=float)
        return sdsigma(x)[..., None, None]

    return SdeModel(
        name="tanh1d",
        dimension=1,
        drift=drift,
        diffusion=diffusion,
        diffusion_gradient=diffusion_gradient,
        constants=_tanh1d_constants(kappa, c, s0, s1),
        params={"kappa": kappa, "c": c, "s0": s0, "s1": s1},
        scalar_drift=sdrift,
        scalar_diffusion=ssigma,
        scalar_diffusion_gradient=sdsigma,
        kernel_code=KERNEL_TANH1D,
        kernel_params=(kappa, c, s0, s1),
    )


def _tanhnd_model(params: dict) -> SdeModel:
    d = int(params.get("d", 2))
    if d < 1:
        raise InvalidParams(f"tanhNd: d must be >= 1, got {d}")
    kappa, c, s0, s1 = _tanh1d_params(params)

    def drift(x):
        x = np.asarray(x, dtype=float)
        return -kappa * x + c * np.sin(x)

    def diffusion(x):
        x = np.asarray(x, dtype=float)
        return _diag_embed(s0 + s1 * np.tanh(x))

    def diffusion_gradient(x):
        x = np.asarray(x, dtype=float)
        t = np.tanh(x)
        grads = s1 * (1.0 - t * t)  # d sigma_{ii} / d x_i
        out = np.zeros(x.shape[:-1] + (d, d, d))
        idx = np.arange(d)
        out[..., idx, idx, idx] = grads
        return out

    return SdeModel(
        name="tanhNd",
        dimension=d,
        drift=drift,
        diffusion=diffusion,
        diffusion_gradient=diffusion_gradient,
        constants=_tanh1d_constants(kappa, c, s0, s1),
        params={"d": d, "kappa": kappa, "c": c, "s0": s0, "s1": s1},
    )


_BUILTIN_MODELS = {"ou": _ou_model, "tanh1d": _tanh1d_model, "tanhNd": _tanhnd_model}


def builtin_model(model_id: str, params: Optional[dict] = None) -> SdeModel:
    """Construct a registered model with analytically derived constants."""
    try:
        factory = _BUILTIN_MODELS[model_id]
    except KeyError:
        raise UnknownModelId(
            f"unknown model id {model_id!r}; available: {sorted(_BUILTIN_MODELS)}"
        ) from None
    return factory(dict(params or {}))


# ---------------------------------------------------------------------------
# builtin test functions
# ---------------------------------------------------------------------------


# test-function callables preserve input dtype (extended precision in the solver)


def _identity_h(params):
    return TestFunction(
        "identity",
        value=lambda x: np.asarray(x),
        deriv=lambda x: np.ones_like(np.asarray(x)),
        second_deriv=lambda x: np.zeros_like(np.asarray(x)),
        bounded=False,
    )


def _gauss_bump_h(params):
    center = float(params.get("center", 0.0))
    width = float(params.get("width", 1.0))
    if width <= 0.0:
        raise InvalidParams(f"gauss_bump: width must be positive, got {width}")

    def value(x):
        u = (np.asarray(x) - center) / width
        return np.exp(-0.5 * u * u)

    def deriv(x):
        u = (np.asarray(x) - center) / width
        return -(u / width) * np.exp(-0.5 * u * u)

    def second_deriv(x):
        u = (np.asarray(x) - center) / width
        return ((u * u - 1.0) / width**2) * np.exp(-0.5 * u * u)

    return TestFunction(
        "gauss_bump", value, deriv, second_deriv, bounded=True,
        params={"center": center, "width": width},
    )


def _tanh_h(params):
    def d2(x):
        t = np.tanh(np.asarray(x))
        return -2.0 * t * (1.0 - t * t)

    return TestFunction(
        "tanh",
        value=lambda x: np.tanh(np.asarray(x)),
        deriv=lambda x: 1.0 - np.tanh(np.asarray(x)) ** 2,
        second_deriv=d2,
        bounded=True,
    )


def _cos_h(params):
    return TestFunction(
        "cos",
        value=lambda x: np.cos(np.asarray(x)),
        deriv=lambda x: -np.sin(np.asarray(x)),
        second_deriv=lambda x: -np.cos(np.asarray(x)),
        bounded=True,
    )


_BUILTIN_H = {
    "identity": _identity_h,
    "gauss_bump": _gauss_bump_h,
    "tanh": _tanh_h,
    "cos": _cos_h,
}


def builtin_test_function(h_id: str, params: Optional[dict] = None) -> TestFunction:
    try:
        factory = _BUILTIN_H[h_id]
    except KeyError:
        raise UnknownTestFunctionId(
            f"unknown test function id {h_id!r}; available: {sorted(_BUILTIN_H)}"
        ) from None
    return factory(dict(params or {}))


def validate_test_function(h: TestFunction, points: np.ndarray, rtol: float = 1e-5):
    """Check h's derivative functions against central finite differences."""
    x = np.asarray(points, dtype=float)
    eps = 1e-6
    fd1 = (h.value(x + eps) - h.value(x - eps)) / (2 * eps)
    fd2 = (h.deriv(x + eps) - h.deriv(x - eps)) / (2 * eps)
    scale1 = np.maximum(np.abs(h.deriv(x)), 1.0)
    scale2 = np.maximum(np.abs(h.second_deriv(x)), 1.0)
    err1 = np.max(np.abs(fd1 - h.deriv(x)) / scale1)
    err2 = np.max(np.abs(fd2 - h.second_deriv(x)) / scale2)
    if err1 > rtol or err2 > rtol:
        raise InvalidParams(
            f"test function {h.name!r}: derivative mismatch vs finite differences "
            f"(rel errors {err1:.2e}, {err2:.2e} exceed {rtol:g})"
        )
    return err1, err2


# ---------------------------------------------------------------------------
# assumption validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SamplingGrid:
    """Sampling spec for assumption checks on a box."""

    bounds: tuple = (-10.0, 10.0)
    n_points: int = 10_000
    n_pairs: int = 10_000
    seed: int = 0


@dataclass
class ValidationReport:
    model: str
    lipschitz_ok: bool
    dissipativity_ok: bool
    positivity_ok: bool
    one_point_ok: bool
    degenerate_diffusion: bool
    observed: dict
    worst: dict

    @property
    def all_ok(self) -> bool:
        return (
            self.lipschitz_ok
            and self.dissipativity_ok
            and self.positivity_ok
            and self.one_point_ok
        )

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "lipschitz_ok": self.lipschitz_ok,
            "dissipativity_ok": self.dissipativity_ok,
            "positivity_ok": self.positivity_ok,
            "one_point_ok": self.one_point_ok,
            "degenerate_diffusion": self.degenerate_diffusion,
            "all_ok": self.all_ok,
            "observed": self.observed,
            "worst": self.worst,
        }


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteEvaluation(f"{name} returned non-finite values on the grid")


# relative slack for inequalities that the builtins attain with equality
_REL_TOL = 1e-9


def validate_assumptions(model: SdeModel, grid: SamplingGrid) -> ValidationReport:
    """Certify the declared constants on sampled points and pairs.

    Checks, over sampled pairs (x, y) and points x:
      * ||b(x)-b(y)|| v ||sigma(x)-sigma(y)||_op <= L ||x-y||
      * <b(x)-b(y), x-y> <= -K1 ||x-y||^2 + K2
      * <x, b(x)> <= -(K1/2)||x||^2 + (K2 + ||b(0)||^2 / (2 K1))
      * smallest eigenvalue of sigma(x) > 0

    The verdict is a property of the sampled set; it is deterministic in
    (bounds, n_points, n_pairs, seed).
    """
    if grid.n_points < 1 or grid.n_pairs < 1:
        raise EmptyGrid("sampling grid must contain at least one point and one pair")
    d = model.dimension
    lo, hi = float(grid.bounds[0]), float(grid.bounds[1])
    rng = Generator(Philox(key=[grid.seed & 0xFFFFFFFFFFFFFFFF, 0]))
    pts = rng.uniform(lo, hi, size=(grid.n_points, d))
    xs = rng.uniform(lo, hi, size=(grid.n_pairs, d))
    ys = rng.uniform(lo, hi, size=(grid.n_pairs, d))

    b_x, b_y = model.drift(xs), model.drift(ys)
    s_x, s_y = model.diffusion(xs), model.diffusion(ys)
    b_pts = model.drift(pts)
    s_pts = model.diffusion(pts)
    g_pts = model.diffusion_gradient(pts)
    for name, arr in (
        ("drift", b_x), ("drift", b_y), ("drift", b_pts),
        ("diffusion", s_x), ("diffusion", s_y), ("diffusion", s_pts),
        ("diffusion_gradient", g_pts),
    ):
        _check_finite(name, arr)

    cst = model.constants
    dx = xs - ys
    dist = np.linalg.norm(dx, axis=-1)
    ok = dist > 0
    db = np.linalg.norm(b_x - b_y, axis=-1)
    dsig = np.linalg.svd(s_x - s_y, compute_uv=False)[..., 0]
    lip_ratio = np.where(ok, np.maximum(db, dsig) / np.where(ok, dist, 1.0), 0.0)
    lip_max = float(np.max(lip_ratio))
    lip_ok = lip_max <= cst.L * (1.0 + _REL_TOL) + 1e-12
    i_lip = int(np.argmax(lip_ratio))

    inner = np.einsum("ij,ij->i", b_x - b_y, dx)
    dissip_excess = inner + cst.K1 * dist**2 - cst.K2
    dis_max = float(np.max(dissip_excess))
    dis_ok = dis_max <= _REL_TOL * float(np.max(cst.K1 * dist**2 + 1.0)) + 1e-12
    i_dis = int(np.argmax(dissip_excess))

    # derived one-point drift bound (Lipschitz + dissipativity via Young)
    xb = np.einsum("ij,ij->i", pts, b_pts)
    bound = -(cst.K1 / 2.0) * np.sum(pts**2, axis=-1) + (
        cst.K2 + cst.b0_norm**2 / (2.0 * cst.K1)
    )
    one_excess = xb - bound
    one_max = float(np.max(one_excess))
    one_ok = one_max <= _REL_TOL * float(np.max(np.abs(bound)) + 1.0) + 1e-12
    i_one = int(np.argmax(one_excess))

    asym = float(np.max(np.abs(s_pts - np.swapaxes(s_pts, -1, -2))))
    eigs = np.linalg.eigvalsh(0.5 * (s_pts + np.swapaxes(s_pts, -1, -2)))
    min_eig = float(np.min(eigs))
    pos_ok = min_eig > 0.0 and asym <= 1e-12 * max(1.0, float(np.max(np.abs(s_pts))))
    i_pos = int(np.argmin(eigs[..., 0]))

    grad_norm_max = float(np.max(np.abs(g_pts)))

    observed = {
        "lipschitz_max_ratio": lip_max,
        "dissipativity_max_excess": dis_max,
        "one_point_max_excess": one_max,
        "sigma_min_eigenvalue": min_eig,
        "grad_sigma_max": grad_norm_max,
    }
    worst = {
        "lipschitz": {"x": xs[i_lip].tolist(), "y": ys[i_lip].tolist(), "ratio": lip_max},
        "dissipativity": {"x": xs[i_dis].tolist(), "y": ys[i_dis].tolist(), "excess": dis_max},
        "one_point": {"x": pts[i_one].tolist(), "excess": one_max},
        "positivity": {"x": pts[i_pos].tolist(), "min_eig": min_eig},
    }
    return ValidationReport(
        model=model.name,
        lipschitz_ok=bool(lip_ok),
        dissipativity_ok=bool(dis_ok),
        positivity_ok=bool(pos_ok),
        one_point_ok=bool(one_ok),
        degenerate_diffusion=bool(grad_norm_max == 0.0),
        observed=observed,
        worst=worst,
    )
