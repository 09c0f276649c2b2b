"""Convex dissipation potentials, their conjugates, and mollified versions.

Everything here works on batches.  A potential maps ``(..., d, d)`` symmetric
matrices to ``(...)`` values; internally the optimisers work in isometric
coordinates (see :mod:`dissipative_flow.tensor_core`), where ``A:B`` is the
ordinary dot product.

The numerical conjugate maximises the concave function ``b -> s.b - F(b)``
over balls of increasing radius with a batched compass search, and declares
the supremum found once two consecutive radii agree.
"""

from dataclasses import dataclass, field
import itertools
import math
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from .exceptions import ConfigurationError, ConjugateDivergenceError, ContractViolation
from .tensor_core import (
    SymTensor,
    as_matrix,
    deviatoric,
    frobenius,
    from_iso,
    n_components,
    to_iso,
    trace,
)

VARIANTS = ("quadratic", "power_law", "custom", "tabulated")
DEFAULT_RADII = tuple(2.0**k for k in range(11))  # 1 .. 1024
SATURATION_RTOL = 1e-8


def _frobenius_norm(mats):
    return frobenius(mats)


# named custom potentials usable from configuration files
CUSTOM_POTENTIALS = {"frobenius_norm": _frobenius_norm}


@dataclass(frozen=True)
class PotentialSpec:
    """A convex dissipation potential ``F`` on symmetric ``dim x dim`` tensors.

    Variants
    --------
    quadratic
        ``mu/2 |D|^2 + lam/2 (tr D)^2`` (the Newtonian case).
    power_law
        ``(mu/q) |D|^q + lam/2 (tr D)^2`` with ``lam >= 0``.
    custom
        ``mu * func(D)`` for a user callable acting on ``(..., d, d)`` arrays.
    tabulated
        Radial profile ``F(D) = f(|D|)``, piecewise linear through ``table``
        and extended linearly beyond the last node.

    ``c`` is the coercivity offset reported alongside the potential.
    """

    variant: str
    dim: int = 1
    mu: float = 1.0
    lam: float = 0.0
    q: float = 2.0
    c: float = 0.0
    func: Optional[Callable] = None
    table: Optional[tuple] = None
    name: str = ""
    _cache: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}", "variant")
        if self.dim not in (1, 2):
            raise ConfigurationError(f"dim must be 1 or 2, got {self.dim}", "dim")
        if not self.mu > 0:
            raise ConfigurationError(f"must be positive, got {self.mu}", "mu")
        if not self.q > 1:
            raise ConfigurationError(f"growth exponent must exceed 1, got {self.q}", "q")
        if self.c < 0:
            raise ConfigurationError(f"must be non-negative, got {self.c}", "c")
        if self.variant == "quadratic":
            if self.q != 2:
                object.__setattr__(self, "q", 2.0)
            if not self.mu + self.dim * self.lam > 0:
                raise ConfigurationError("mu + dim*lam must be positive for convexity", "lam")
        elif self.variant == "power_law":
            if self.lam < 0:
                raise ConfigurationError("power-law bulk coefficient must be >= 0", "lam")
        elif self.variant == "custom":
            if not callable(self.func):
                raise ConfigurationError("custom potential needs a callable", "func")
        elif self.variant == "tabulated":
            self._check_table()
        zero = float(self.values(np.zeros((self.dim, self.dim))))
        if abs(zero) > 1e-12:
            raise ConfigurationError(f"potential must vanish at 0, got F(0)={zero}", "variant")

    def _check_table(self):
        if self.table is None or len(self.table) != 2:
            raise ConfigurationError("tabulated potential needs (radii, values)", "table")
        r = np.asarray(self.table[0], dtype=float)
        f = np.asarray(self.table[1], dtype=float)
        if r.ndim != 1 or r.shape != f.shape or r.size < 2:
            raise ConfigurationError("radii and values must be matching 1D lists", "table")
        if r[0] != 0 or np.any(np.diff(r) <= 0):
            raise ConfigurationError("radii must start at 0 and increase", "table")
        if f[0] != 0 or np.any(f < 0):
            raise ConfigurationError("values must start at 0 and stay non-negative", "table")
        slopes = np.diff(f) / np.diff(r)
        if np.any(np.diff(slopes) < -1e-12):
            raise ConfigurationError("radial profile is not convex", "table")
        object.__setattr__(self, "table", (tuple(r), tuple(f)))

    # -- constructors -----------------------------------------------------
    @classmethod
    def quadratic(cls, mu=1.0, lam=0.0, dim=1):
        return cls("quadratic", dim=dim, mu=mu, lam=lam, q=2.0)

    @classmethod
    def power_law(cls, mu=1.0, q=2.0, lam=0.0, dim=1, c=0.0):
        return cls("power_law", dim=dim, mu=mu, lam=lam, q=q, c=c)

    @classmethod
    def custom(cls, func, dim=1, mu=1.0, q=2.0, c=0.0, name=""):
        if isinstance(func, str):
            if func not in CUSTOM_POTENTIALS:
                raise ConfigurationError(f"unknown custom potential {func!r}", "func")
            name = name or func
            func = CUSTOM_POTENTIALS[func]
        return cls("custom", dim=dim, mu=mu, q=q, c=c, func=func, name=name)

    @classmethod
    def tabulated(cls, radii, values, dim=1, q=2.0, c=0.0):
        return cls("tabulated", dim=dim, q=q, c=c, table=(tuple(radii), tuple(values)))

    # -- evaluation ------------------------------------------------------------
    @property
    def is_quadratic(self):
        return self.variant == "quadratic"

    def values(self, mats):
        """``F`` on a batch of ``(..., d, d)`` symmetric matrices."""
        mats = np.asarray(mats, dtype=float)
        if self.variant == "quadratic":
            return 0.5 * self.mu * np.sum(mats * mats, axis=(-2, -1)) + 0.5 * self.lam * trace(
                mats
            ) ** 2
        if self.variant == "power_law":
            return (self.mu / self.q) * frobenius(mats) ** self.q + 0.5 * self.lam * trace(
                mats
            ) ** 2
        if self.variant == "custom":
            return self.mu * np.asarray(self.func(mats), dtype=float)
        r, f = (np.asarray(t) for t in self.table)
        norm = frobenius(mats)
        tail = f[-1] + (norm - r[-1]) * (f[-1] - f[-2]) / (r[-1] - r[-2])
        return np.where(norm <= r[-1], np.interp(norm, r, f), tail)

    def iso_values(self, z):
        return self.values(from_iso(z, self.dim))

    def __call__(self, D):
        return eval_potential(self, D)

    def gradient(self, mats):
        """Analytic gradient where available (quadratic and power law)."""
        mats = np.asarray(mats, dtype=float)
        eye = np.eye(self.dim)
        bulk = self.lam * trace(mats)[..., None, None] * eye
        if self.variant == "quadratic":
            return self.mu * mats + bulk
        if self.variant == "power_law":
            norm = frobenius(mats)[..., None, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                scale = np.where(norm > 0, norm ** (self.q - 2), 0.0)
            return self.mu * scale * mats + bulk
        raise ContractViolation(f"no analytic gradient for variant {self.variant!r}")


def eval_potential(potential, D):
    """Evaluate a potential (spec or mollified handle) at one tensor."""
    mat = as_matrix(D)
    if mat.shape != (potential.dim, potential.dim):
        raise ContractViolation(
            f"tensor of shape {mat.shape} does not match potential dimension {potential.dim}"
        )
    return float(potential.values(mat))


# ---------------------------------------------------------------------------
# batched compass search


def _stencil(k):
    """Non-zero offsets of the ``3^k`` compass-and-diagonal stencil."""
    offs = np.array(list(itertools.product((-1.0, 0.0, 1.0), repeat=k)))
    return offs[np.any(offs != 0, axis=1)]


def _project(points, radius):
    norm = np.linalg.norm(points, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norm > radius, radius / norm, 1.0)
    return points * scale


def maximize_concave(objective, x0, radius, step0, tol, max_iter=20000):
    """Batched compass search for ``max objective`` over ``|x| <= radius``.

    ``objective(points, idx)`` receives candidate points of shape ``(b, m, k)``
    for the batch members ``idx`` and returns ``(b, m)`` values.  Each member
    moves to its best stencil point while that improves, and halves its step
    otherwise, until the step drops below ``tol``.
    """
    x = _project(np.array(x0, dtype=float), radius)
    B, k = x.shape
    offs = _stencil(k)
    fx = objective(x[:, None, :], np.arange(B))[:, 0]
    fx = np.where(np.isnan(fx), -np.inf, fx)
    step = np.full(B, float(step0))
    active = step >= tol
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cand = _project(x[idx, None, :] + step[idx, None, None] * offs, radius)
        fc = objective(cand, idx)
        fc = np.where(np.isnan(fc), -np.inf, fc)
        j = np.argmax(fc, axis=1)
        best = fc[np.arange(idx.size), j]
        up = best > fx[idx]
        moved = idx[up]
        x[moved] = cand[up, j[up]]
        fx[moved] = best[up]
        step[idx[~up]] *= 0.5
        active[idx] = step[idx] >= tol
    return x, fx


@dataclass(frozen=True)
class ConjugateResult:
    """Outcome of a numerical conjugate evaluation.

    ``value`` is ``inf`` when the supremum never settled (``saturated`` is
    False); ``argmax`` is the maximiser found at the last radius searched.
    """

    value: float
    saturated: bool
    argmax: SymTensor
    radius: float


def _check_radii(radii):
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 2:
        raise ContractViolation("radius schedule needs at least two radii")
    if radii[0] <= 0 or np.any(np.diff(radii) <= 0):
        raise ContractViolation("radius schedule must be positive and increasing")
    return radii


def conjugate_iso(func, s, radii=DEFAULT_RADII, rtol=SATURATION_RTOL):
    """Numerical ``sup_b s.b - func(b)`` for a batch ``s`` of shape ``(B, k)``.

    Returns ``(values, saturated, argmax, radius)`` arrays; unsaturated
    entries have value ``inf``.
    """
    radii = _check_radii(radii)
    s = np.atleast_2d(np.asarray(s, dtype=float))
    B, k = s.shape
    prev = np.full(B, -np.inf)
    x = np.zeros((B, k))
    done = np.zeros(B, dtype=bool)
    reached = np.zeros(B)

    for R in radii:
        todo = np.flatnonzero(~done)
        if todo.size == 0:
            break
        s_todo = s[todo]

        def objective(points, idx, s_todo=s_todo):
            lin = np.einsum("bk,bmk->bm", s_todo[idx], points)
            return lin - func(points)

        xs, fx = maximize_concave(objective, x[todo], R, 0.5 * R, 1e-7 * max(1.0, R))
        settled = np.abs(fx - prev[todo]) <= rtol * np.maximum(1.0, np.abs(fx))
        prev[todo] = fx
        x[todo] = xs
        reached[todo] = R
        done[todo] = settled
    values = np.where(done, prev, np.inf)
    return values, done, x, reached


def _as_batch(potential, S):
    mats = as_matrix(S)
    if mats.shape[-2:] != (potential.dim, potential.dim):
        raise ContractViolation(
            f"tensor shape {mats.shape} does not match potential dimension {potential.dim}"
        )
    return mats


def conjugate_values(potential, S, radii=DEFAULT_RADII):
    """Numerical conjugate on a batch ``(..., d, d)``; divergent entries are ``inf``."""
    mats = _as_batch(potential, S)
    z = to_iso(mats).reshape(-1, n_components(potential.dim))
    values, _, _, _ = conjugate_iso(potential.iso_values, z, radii)
    return values.reshape(mats.shape[:-2])


def fenchel_conjugate(potential, S, radii=DEFAULT_RADII, strict=False):
    """``F*(S) = sup_B S:B - F(B)`` by nested search over expanding balls.

    The value is non-negative because ``B = 0`` is always admissible.  When
    the supremum keeps moving at the largest radius the result carries
    ``saturated=False`` and ``value=inf``; with ``strict=True`` a
    :class:`ConjugateDivergenceError` is raised instead.
    """
    mat = _as_batch(potential, S)
    if mat.shape != (potential.dim, potential.dim):
        raise ContractViolation("fenchel_conjugate takes a single tensor")
    key = (to_iso(mat).tobytes(), tuple(np.asarray(radii, dtype=float)))
    cache = getattr(potential, "_cache", None)
    if cache is not None and key in cache:
        result = cache[key]
    else:
        values, done, x, reached = conjugate_iso(
            potential.iso_values, to_iso(mat)[None, :], radii
        )
        result = ConjugateResult(
            float(values[0]),
            bool(done[0]),
            SymTensor.from_iso(x[0], potential.dim),
            float(reached[0]),
        )
        if cache is not None and getattr(potential, "variant", "") in ("custom", "tabulated"):
            cache[key] = result
    if strict and not result.saturated:
        raise ConjugateDivergenceError(
            f"conjugate still growing at radius {result.radius}"
        )
    return result


def quadratic_conjugate(spec, S):
    """Closed-form conjugate of a quadratic potential.

    ``F*(S) = |dev S|^2 / (2 mu) + (tr S)^2 / (2 d (mu + d lam))``.
    """
    if not spec.is_quadratic:
        raise ContractViolation("closed-form conjugate only exists for the quadratic variant")
    mats = as_matrix(S)
    d = spec.dim
    dev = deviatoric(mats)
    return np.sum(dev * dev, axis=(-2, -1)) / (2 * spec.mu) + trace(mats) ** 2 / (
        2 * d * (spec.mu + d * spec.lam)
    )


def fenchel_young_residual(potential, S, D, radii=DEFAULT_RADII):
    """``F(D) + F*(S) - S:D``; non-negative, zero iff ``S`` is a subgradient at ``D``.

    Returns ``inf`` when the conjugate diverges.
    """
    S = as_matrix(S)
    D = as_matrix(D)
    conj = fenchel_conjugate(potential, S, radii)
    if not conj.saturated:
        return math.inf
    return eval_potential(potential, D) + conj.value - float(np.sum(S * D))


def biconjugate(potential, D, radii=DEFAULT_RADII, inner_radii=DEFAULT_RADII):
    """``F**(D)`` with both suprema computed numerically.

    Returns a :class:`ConjugateResult` for the outer supremum.
    """
    mat = _as_batch(potential, D)
    k = n_components(potential.dim)

    def conj(points):
        flat = points.reshape(-1, k)
        vals, _, _, _ = conjugate_iso(potential.iso_values, flat, inner_radii)
        return vals.reshape(points.shape[:-1])

    values, done, x, reached = conjugate_iso(conj, to_iso(mat)[None, :], radii)
    return ConjugateResult(
        float(values[0]), bool(done[0]), SymTensor.from_iso(x[0], potential.dim), float(reached[0])
    )


def superlinearity_probe(potential, direction, radii, conj_radii=DEFAULT_RADII):
    """Ratios ``F*(r e) / r`` along a unit direction ``e``.

    Divergent conjugates appear as ``inf`` entries.
    """
    e = as_matrix(direction)
    if abs(float(frobenius(e)) - 1.0) > 1e-9:
        raise ContractViolation("direction must have unit Frobenius norm")
    radii = np.asarray(radii, dtype=float)
    if np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise ContractViolation("probe radii must be positive and increasing")
    vals = conjugate_values(potential, radii[:, None, None] * e, conj_radii)
    return vals / radii


# ---------------------------------------------------------------------------
# mollification


@dataclass(frozen=True)
class MollifierSpec:
    """Polynomial bump ``(1 - |z/delta|^2)^power`` on the tensor space.

    The kernel is integrated with a tensor-product midpoint rule using
    ``nodes`` points per isometric axis of the box ``[-delta, delta]^k``.
    """

    delta: float
    nodes: int = 15
    power: int = 3

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigurationError(f"must be positive, got {self.delta}", "delta")
        if self.nodes < 3:
            raise ConfigurationError("need at least 3 quadrature nodes per axis", "nodes")
        if self.power < 1:
            raise ConfigurationError("bump power must be at least 1", "power")

    def normalisation(self, k):
        """Exact integral of the unscaled bump over the unit ball in ``R^k``."""
        p = self.power
        return math.exp(0.5 * k * math.log(math.pi) + gammaln(p + 1) - gammaln(p + 1 + 0.5 * k))

    def quadrature(self, dim):
        """Offsets ``(M, k)`` and weights ``(M,)`` summing exactly to one."""
        k = n_components(dim)
        h = 2.0 / self.nodes
        axis = -1.0 + h * (np.arange(self.nodes) + 0.5)
        pts = np.array(list(itertools.product(axis, repeat=k)))
        r2 = np.sum(pts * pts, axis=1)
        inside = r2 < 1.0
        pts, r2 = pts[inside], r2[inside]
        bump = (1.0 - r2) ** self.power
        raw_mass = float(np.sum(bump) * h**k / self.normalisation(k))
        if abs(raw_mass - 1.0) > 1e-2:
            raise ConfigurationError(
                f"kernel quadrature mass {raw_mass:.6f} is too far from 1; "
                "increase the node count",
                "nodes",
            )
        weights = bump / np.sum(bump)
        return self.delta * pts, weights, raw_mass


class MollifiedPotential:
    """Inf-normalised convolution ``F_delta = xi_delta * F - inf(xi_delta * F)``.

    For the quadratic variant the convolution with a symmetric unit-mass
    kernel only adds a constant, so ``F_delta = F`` exactly; that closed form
    is used unless ``analytic=False``.
    """

    chunk = 1 << 20

    def __init__(self, spec, moll, analytic=True):
        self.spec = spec
        self.moll = moll
        self.dim = spec.dim
        self.analytic = bool(analytic and spec.is_quadratic)
        self.offsets, self.weights, self.raw_mass = moll.quadrature(spec.dim)
        self.shift = 0.0 if self.analytic else self._infimum()

    @property
    def is_quadratic(self):
        return self.analytic

    def __repr__(self):
        return f"MollifiedPotential({self.spec!r}, {self.moll!r})"

    def _convolve(self, z):
        z = np.asarray(z, dtype=float)
        k = z.shape[-1]
        flat = z.reshape(-1, k)
        out = np.empty(flat.shape[0])
        step = max(1, self.chunk // self.weights.size)
        for i in range(0, flat.shape[0], step):
            pts = flat[i : i + step, None, :] - self.offsets[None, :, :]
            out[i : i + step] = self.spec.iso_values(pts) @ self.weights
        return out.reshape(z.shape[:-1])

    def _infimum(self):
        k = n_components(self.dim)

        def objective(points, idx):
            return -self._convolve(points)

        _, fx = maximize_concave(objective, np.zeros((1, k)), 1e6, max(1.0, self.moll.delta), 1e-9)
        return -float(fx[0])

    def iso_values(self, z):
        if self.analytic:
            return self.spec.iso_values(z)
        return self._convolve(z) - self.shift

    def values(self, mats):
        mats = np.asarray(mats, dtype=float)
        return self.iso_values(to_iso(mats))

    def __call__(self, D):
        return eval_potential(self, D)

    def gradient(self, mats):
        if self.analytic:
            return self.spec.gradient(mats)
        raise ContractViolation("mollified potential has no closed-form gradient")


def mollify(spec, moll, analytic=True):
    """Build the smoothed potential handle ``F_delta``."""
    if isinstance(moll, (int, float)):
        moll = MollifierSpec(float(moll))
    return MollifiedPotential(spec, moll, analytic=analytic)


def stress_field(potential, mats):
    """Gradient of ``potential`` on a batch of ``(..., d, d)`` tensors.

    Quadratic potentials use the closed form; everything else uses central
    differences in isometric coordinates with step ``1e-5 max(1, |D|)``.
    """
    mats = np.asarray(mats, dtype=float)
    if getattr(potential, "is_quadratic", False):
        return potential.gradient(mats)
    z = to_iso(mats)
    k = z.shape[-1]
    h = 1e-5 * np.maximum(1.0, np.linalg.norm(z, axis=-1))
    eye = np.eye(k)
    plus = z[..., None, :] + h[..., None, None] * eye
    minus = z[..., None, :] - h[..., None, None] * eye
    vals = potential.iso_values(np.concatenate([plus, minus], axis=-2))
    grad = (vals[..., :k] - vals[..., k:]) / (2.0 * h[..., None])
    return from_iso(grad, potential.dim)


def stress_select(potential, D):
    """The stress ``S = grad F_delta(D)`` as a :class:`SymTensor`."""
    mat = _as_batch(potential, D)
    return SymTensor.from_matrix(stress_field(potential, mat))


# ---------------------------------------------------------------------------
# structural checks


def sample_ball(dim, count, radius, rng):
    """``count`` tensors uniformly distributed in the Frobenius ball."""
    k = n_components(dim)
    z = rng.standard_normal((count, k))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    z *= radius * rng.random((count, 1)) ** (1.0 / k)
    return from_iso(z, dim)


@dataclass(frozen=True)
class CoercivityReport:
    nu: float
    c: float
    q: float
    samples: int
    max_violation: float
    passed: bool
    full_gradient: bool = False


def coercivity_check(potential, nu, c, q, samples=1000, radius=10.0, seed=0,
                     full_gradient=False, tol=1e-9):
    """Largest violation of ``F(D) >= nu |dev D|^q - c`` on random tensors.

    With ``full_gradient=True`` the bound uses ``|D|`` instead of the
    deviatoric part, which is the meaningful check in one dimension.
    """
    if samples < 100:
        raise ContractViolation("coercivity check needs at least 100 samples")
    rng = np.random.default_rng(seed)
    D = sample_ball(potential.dim, samples, radius, rng)
    part = D if full_gradient else deviatoric(D)
    lower = nu * frobenius(part) ** q - c
    violation = float(np.max(lower - potential.values(D)))
    return CoercivityReport(nu, c, q, samples, violation, violation <= tol, full_gradient)


@dataclass(frozen=True)
class CoercivitySweep:
    deltas: tuple
    reports: tuple
    certified: bool
    worst_violation: float


def coercivity_sweep(spec, deltas, nu, c, q, samples=1000, radius=10.0, seed=0,
                     full_gradient=False, nodes=15):
    """Check that one ``(nu, c)`` pair certifies ``F_delta`` for every ``delta``."""
    reports = tuple(
        coercivity_check(
            mollify(spec, MollifierSpec(float(dl), nodes), analytic=False),
            nu, c, q, samples, radius, seed, full_gradient,
        )
        for dl in deltas
    )
    worst = max(r.max_violation for r in reports)
    return CoercivitySweep(tuple(deltas), reports, all(r.passed for r in reports), worst)


def mollification_errors(spec, deltas, probes, nodes=15):
    """``|F_delta(D) - F(D)|`` for each delta (rows) and probe tensor (columns)."""
    probes = np.asarray(probes, dtype=float)
    exact = spec.values(probes)
    rows = []
    for dl in deltas:
        smooth = mollify(spec, MollifierSpec(float(dl), nodes), analytic=False)
        rows.append(np.abs(smooth.values(probes) - exact))
    return np.array(rows)


def convexity_violation(potential, samples=1000, radius=10.0, seed=0):
    """Largest ``F(tA + (1-t)B) - t F(A) - (1-t) F(B)`` over random triples."""
    rng = np.random.default_rng(seed)
    A = sample_ball(potential.dim, samples, radius, rng)
    B = sample_ball(potential.dim, samples, radius, rng)
    t = rng.random(samples)[:, None, None]
    mid = potential.values(t * A + (1 - t) * B)
    chord = t[:, 0, 0] * potential.values(A) + (1 - t[:, 0, 0]) * potential.values(B)
    return float(np.max(mid - chord))
