"""Symmetric tensors, the unit-box grid, and the sine Galerkin basis.

Tensors are handled in two forms.  :class:`SymTensor` is the value type used
at API boundaries and stores only the independent components.  Inside the
solvers, batches of tensors are plain ``(..., d, d)`` arrays, and the space
of symmetric tensors is parametrised by *isometric coordinates*
``(A11, A22, sqrt(2) A12)`` so that the Euclidean norm of the coordinate
vector is the Frobenius norm and the dot product is ``A:B``.
"""

from dataclasses import dataclass
from functools import cached_property, lru_cache
import math

import numpy as np

from .exceptions import ContractViolation, DegenerateQuotientError

SQRT2 = math.sqrt(2.0)


def n_components(dim):
    """Number of independent entries of a symmetric ``dim x dim`` tensor."""
    return dim * (dim + 1) // 2


def to_iso(mats):
    """Isometric coordinates of a batch of symmetric matrices ``(..., d, d)``."""
    mats = np.asarray(mats, dtype=float)
    d = mats.shape[-1]
    if d == 1:
        return mats[..., 0, :]
    if d == 2:
        return np.stack(
            [mats[..., 0, 0], mats[..., 1, 1], SQRT2 * mats[..., 0, 1]], axis=-1
        )
    raise ContractViolation(f"unsupported tensor dimension {d}")


def from_iso(coords, dim):
    """Inverse of :func:`to_iso`; returns ``(..., dim, dim)`` arrays."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape[-1] != n_components(dim):
        raise ContractViolation(
            f"expected {n_components(dim)} coordinates for dim={dim}, "
            f"got {coords.shape[-1]}"
        )
    if dim == 1:
        return coords[..., None]
    off = coords[..., 2] / SQRT2
    out = np.empty(coords.shape[:-1] + (2, 2))
    out[..., 0, 0] = coords[..., 0]
    out[..., 1, 1] = coords[..., 1]
    out[..., 0, 1] = off
    out[..., 1, 0] = off
    return out


def frobenius(mats):
    mats = np.asarray(mats, dtype=float)
    return np.sqrt(np.sum(mats * mats, axis=(-2, -1)))


def trace(mats):
    return np.trace(np.asarray(mats, dtype=float), axis1=-2, axis2=-1)


def deviatoric(A):
    """Trace-free part ``A - tr(A)/d I``.

    Accepts a :class:`SymTensor` (returns one) or a batch of ``(..., d, d)``
    arrays.  In one dimension the result is identically zero.
    """
    if isinstance(A, SymTensor):
        return SymTensor.from_matrix(deviatoric(A.matrix()))
    A = np.asarray(A, dtype=float)
    d = A.shape[-1]
    return A - (trace(A) / d)[..., None, None] * np.eye(d)


def symmetrize(grads):
    """``(G + G^T) / 2`` for a batch of square matrices."""
    grads = np.asarray(grads, dtype=float)
    return 0.5 * (grads + np.swapaxes(grads, -1, -2))


@dataclass(frozen=True)
class SymTensor:
    """Symmetric ``dim x dim`` tensor stored by its independent entries.

    ``entries`` is ``(A11,)`` in 1D and ``(A11, A22, A12)`` in 2D.
    """

    dim: int
    entries: tuple

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ContractViolation(f"dim must be 1 or 2, got {self.dim}")
        entries = tuple(float(e) for e in self.entries)
        if len(entries) != n_components(self.dim):
            raise ContractViolation(
                f"dim={self.dim} needs {n_components(self.dim)} entries, "
                f"got {len(entries)}"
            )
        object.__setattr__(self, "entries", entries)

    @classmethod
    def from_matrix(cls, mat):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim == 0:
            mat = mat.reshape(1, 1)
        if mat.shape == (1, 1):
            return cls(1, (mat[0, 0],))
        if mat.shape == (2, 2):
            if not math.isclose(mat[0, 1], mat[1, 0], rel_tol=1e-12, abs_tol=1e-14):
                raise ContractViolation("matrix is not symmetric")
            return cls(2, (mat[0, 0], mat[1, 1], 0.5 * (mat[0, 1] + mat[1, 0])))
        raise ContractViolation(f"unsupported matrix shape {mat.shape}")

    @classmethod
    def from_iso(cls, coords, dim):
        return cls.from_matrix(from_iso(coords, dim))

    @classmethod
    def zeros(cls, dim):
        return cls(dim, (0.0,) * n_components(dim))

    @classmethod
    def identity(cls, dim):
        return cls.from_matrix(np.eye(dim))

    @classmethod
    def diag(cls, *values):
        return cls.from_matrix(np.diag(values))

    def matrix(self):
        if self.dim == 1:
            return np.array([[self.entries[0]]])
        a11, a22, a12 = self.entries
        return np.array([[a11, a12], [a12, a22]])

    def iso(self):
        return to_iso(self.matrix())

    def norm(self):
        return float(frobenius(self.matrix()))

    def trace(self):
        return float(trace(self.matrix()))

    def deviatoric(self):
        return deviatoric(self)

    def dot(self, other):
        """Frobenius product ``A:B``."""
        return float(np.sum(self.matrix() * other.matrix()))

    def __add__(self, other):
        return SymTensor.from_matrix(self.matrix() + other.matrix())

    def __sub__(self, other):
        return SymTensor.from_matrix(self.matrix() - other.matrix())

    def __mul__(self, scalar):
        return SymTensor(self.dim, tuple(scalar * e for e in self.entries))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def as_matrix(A, dim=None):
    """Coerce a SymTensor, scalar, or array to a ``(..., d, d)`` array."""
    if isinstance(A, SymTensor):
        return A.matrix()
    A = np.asarray(A, dtype=float)
    if A.ndim == 0:
        return A.reshape(1, 1)
    if dim is not None and A.shape[-2:] != (dim, dim):
        raise ContractViolation(f"expected trailing shape ({dim}, {dim}), got {A.shape}")
    return A


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred grid on the unit box ``(0, 1)^dim``.

    Cells are flattened in C order (first axis slowest).  Integrals use the
    composite midpoint rule with weight ``h**dim`` per cell.
    """

    dim: int
    cells: int
    quadrature: str = "midpoint"

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ContractViolation(f"dim must be 1 or 2, got {self.dim}")
        if self.cells < 4:
            raise ContractViolation(f"need at least 4 cells per axis, got {self.cells}")
        if self.quadrature != "midpoint":
            raise ContractViolation(f"unknown quadrature rule {self.quadrature!r}")

    @property
    def h(self):
        return 1.0 / self.cells

    @property
    def shape(self):
        return (self.cells,) * self.dim

    @property
    def size(self):
        return self.cells**self.dim

    @property
    def cell_volume(self):
        return self.h**self.dim

    @cached_property
    def axis_centers(self):
        return (np.arange(self.cells) + 0.5) * self.h

    @cached_property
    def axis_faces(self):
        return np.arange(self.cells + 1) * self.h

    @cached_property
    def centers(self):
        """Cell centres, shape ``(size, dim)``."""
        axes = [self.axis_centers] * self.dim
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def faces(self, axis):
        """Centres of the faces normal to ``axis``, shape ``(n_faces, dim)``.

        Along ``axis`` there are ``cells + 1`` faces; the ordering is C order
        over the face lattice.
        """
        axes = [
            self.axis_faces if b == axis else self.axis_centers for b in range(self.dim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def weights(self):
        return np.full(self.size, self.cell_volume)

    def integrate(self, values):
        """Midpoint-rule integral over the leading cell axis of ``values``."""
        values = np.asarray(values, dtype=float)
        return np.tensordot(self.weights, values, axes=(0, 0))

    def sample(self, func):
        """Evaluate ``func(x)`` at the cell centres (``x`` has shape ``(size, dim)``)."""
        return np.asarray(func(self.centers), dtype=float)


@dataclass(frozen=True)
class GalerkinBasis:
    """Orthonormal tensor-product sine modes vanishing on the box boundary.

    In 1D, mode ``k`` is ``sqrt(2) sin(k pi x)``.  In 2D, mode ``(k, l, c)`` is
    ``2 sin(k pi x) sin(l pi y) e_c``; modes are ordered by ``k^2 + l^2``, then
    ``k``, ``l``, and component ``c``.
    """

    dim: int
    n_modes: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ContractViolation(f"dim must be 1 or 2, got {self.dim}")
        if self.n_modes < 1:
            raise ContractViolation("need at least one mode")

    @cached_property
    def modes(self):
        """Tuple of ``(wavenumbers, component)`` pairs."""
        if self.dim == 1:
            return tuple(((k,), 0) for k in range(1, self.n_modes + 1))
        n_pairs = (self.n_modes + 1) // 2
        # the first m pairs in this order all have k, l <= m
        pairs = [(k, l) for k in range(1, n_pairs + 1) for l in range(1, n_pairs + 1)]
        pairs.sort(key=lambda kl: (kl[0] ** 2 + kl[1] ** 2, kl[0], kl[1]))
        out = []
        for kl in pairs[:n_pairs]:
            out.extend(((kl, 0), (kl, 1)))
        return tuple(out[: self.n_modes])

    @property
    def max_wavenumber(self):
        return max(max(kl) for kl, _ in self.modes)

    def _factors(self, x):
        """Per-axis sine/cosine factors for every mode at points ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dim:
            raise ContractViolation(f"points must have {self.dim} coordinates")
        ks = np.array([kl for kl, _ in self.modes], dtype=float)  # (n, dim)
        arg = np.pi * ks[:, None, :] * x[None, :, :]  # (n, P, dim)
        amp = SQRT2**self.dim
        return ks, np.sin(arg), np.cos(arg), amp

    def values(self, x):
        """Mode values, shape ``(n, P, dim)``."""
        _, s, _, amp = self._factors(x)
        scalar = amp * np.prod(s, axis=-1)  # (n, P)
        out = np.zeros(scalar.shape + (self.dim,))
        for i, (_, comp) in enumerate(self.modes):
            out[i, :, comp] = scalar[i]
        return out

    def gradients(self, x):
        """Mode gradients ``G[i, p, a, b] = d w_{i,a} / d x_b``, shape ``(n, P, d, d)``."""
        ks, s, c, amp = self._factors(x)
        n, P = s.shape[:2]
        grads = np.zeros((n, P, self.dim, self.dim))
        for b in range(self.dim):
            factor = np.pi * ks[:, None, b] * c[:, :, b]
            for other in range(self.dim):
                if other != b:
                    factor = factor * s[:, :, other]
            for i, (_, comp) in enumerate(self.modes):
                grads[i, :, comp, b] = amp * factor[i]
        return grads

    def check_coeffs(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != self.n_modes:
            raise ContractViolation(
                f"coefficient vector has length {coeffs.shape[-1]}, basis has "
                f"{self.n_modes} modes"
            )
        return coeffs

    def velocity(self, coeffs, x):
        coeffs = self.check_coeffs(coeffs)
        return np.einsum("i,ipa->pa", coeffs, self.values(x))

    def velocity_gradient(self, coeffs, x):
        coeffs = self.check_coeffs(coeffs)
        return np.einsum("i,ipab->pab", coeffs, self.gradients(x))

    def gram(self, grid):
        """Discrete L2 Gram matrix on ``grid`` (identity for orthonormal modes)."""
        W = tabulate(self, grid).values
        return np.einsum("ipa,p,jpa->ij", W, grid.weights, W)


@dataclass(frozen=True)
class BasisTable:
    """Basis values tabulated at the cell centres and faces of a grid."""

    values: np.ndarray  # (n, P, d)
    gradients: np.ndarray  # (n, P, d, d)
    face_normals: tuple  # per axis b: (n, F_b), the b-component at b-faces
    divergence: np.ndarray  # (n, P)


@lru_cache(maxsize=64)
def tabulate(basis, grid):
    """Tabulate ``basis`` on ``grid``; cached because both are immutable."""
    if basis.dim != grid.dim:
        raise ContractViolation("basis and grid dimensions differ")
    if basis.max_wavenumber >= grid.cells:
        raise ContractViolation(
            f"grid with {grid.cells} cells cannot resolve wavenumber "
            f"{basis.max_wavenumber}"
        )
    W = basis.values(grid.centers)
    G = basis.gradients(grid.centers)
    faces = tuple(basis.values(grid.faces(b))[:, :, b] for b in range(grid.dim))
    div = np.trace(G, axis1=-2, axis2=-1)
    for arr in (W, G, div, *faces):
        arr.setflags(write=False)
    return BasisTable(W, G, faces, div)


def sym_gradient(coeffs, basis, x):
    """Symmetric velocity gradient of ``sum_i coeffs[i] w_i`` at a point ``x``."""
    x = np.asarray(x, dtype=float).reshape(1, basis.dim)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ContractViolation("point lies outside the closed unit box")
    grad = basis.velocity_gradient(coeffs, x)[0]
    return SymTensor.from_matrix(symmetrize(grad))


def lq_norm(fields, grid, q):
    """``(int |A|^q dx)^(1/q)`` for a tensor field ``(P, d, d)``."""
    return float(grid.integrate(frobenius(fields) ** q) ** (1.0 / q))


def korn_quotient(coeffs, basis, q, grid=None):
    """``||grad u||_q / ||dev D u||_q`` evaluated by midpoint quadrature.

    Raises :class:`DegenerateQuotientError` when the deviatoric symmetric
    gradient vanishes identically (``u = 0``, or any ``u`` in one dimension).
    """
    if q <= 1:
        raise ContractViolation("Korn exponent must exceed 1")
    if grid is None:
        grid = Grid(basis.dim, max(64, 4 * basis.max_wavenumber))
    coeffs = basis.check_coeffs(coeffs)
    grads = np.einsum("i,ipab->pab", coeffs, tabulate(basis, grid).gradients)
    denom = lq_norm(deviatoric(symmetrize(grads)), grid, q)
    numer = lq_norm(grads, grid, q)
    scale = max(numer, 1e-300)
    if denom <= 1e-13 * scale or numer == 0.0:
        raise DegenerateQuotientError("deviatoric symmetric gradient vanishes")
    return numer / denom
