"""Young functions certifying uniform integrability of a family of functions.

Given grid functions ``f_n``, pick integer levels ``C_1 < C_2 < ...`` with
``sup_n int_{|f_n| > C_m} |f_n| <= 2^-m`` and form the convex piecewise-linear

    Phi(t) = sum_k (t - C_k)^+ ,

whose slope on ``(m, m+1]`` is ``alpha_m = #{k : C_k <= m}``.  Then
``sup_n int Phi(|f_n|) <= sum_m 2^-m <= 1``.  Inflating the levels so that
``C_m >= 2 C_{m-1}`` gives ``alpha_{2m} <= 2 alpha_m`` and hence a doubling
(Delta-2) bound for large arguments.
"""

from dataclasses import dataclass, field
import csv

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ContractViolation, EquiIntegrabilityError

J_MAX = 2**20
M_MAX = 40


@dataclass(frozen=True)
class SampleFamily:
    """Functions sampled on equal cells of a set of finite measure.

    ``values`` has shape ``(members, cells)``; ``cell_measure`` is the
    measure of one cell.
    """

    values: np.ndarray
    cell_measure: float

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.values, dtype=float))
        if not np.all(np.isfinite(vals)):
            raise ContractViolation("family members must be finite (integrable)")
        if not self.cell_measure > 0:
            raise ContractViolation("cell measure must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def on_unit_interval(cls, functions, cells):
        """Sample callables at the midpoints of ``cells`` equal cells of ``[0, 1]``."""
        x = (np.arange(cells) + 0.5) / cells
        return cls(np.array([f(x) for f in functions]), 1.0 / cells)

    @property
    def members(self):
        return self.values.shape[0]

    def head(self, count):
        return SampleFamily(self.values[:count], self.cell_measure)

    def l1_norms(self):
        return np.abs(self.values).sum(axis=1) * self.cell_measure

    def sorted_abs(self):
        """Ascending ``|f_n|`` per member with suffix sums, for tail queries."""
        srt = np.sort(np.abs(self.values), axis=1)
        suffix = np.cumsum(srt[:, ::-1], axis=1)[:, ::-1]
        return srt, suffix


def tail_masses(family, j_max):
    """``mu_j(f_n) = |{|f_n| > j}|`` for ``j = 1..j_max``; shape ``(members, j_max)``."""
    if j_max < 1:
        raise ContractViolation("j_max must be at least 1")
    srt, _ = family.sorted_abs()
    levels = np.arange(1, j_max + 1, dtype=float)
    cells = srt.shape[1]
    above = np.array([cells - np.searchsorted(row, levels, side="right") for row in srt])
    return above * family.cell_measure


def tail_integrals(family, levels):
    """``sup_n int_{|f_n| > C} |f_n|`` for each level ``C``."""
    srt, suffix = family.sorted_abs()
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    cells = srt.shape[1]
    out = np.zeros(levels.shape)
    for row, suf in zip(srt, suffix):
        start = np.searchsorted(row, levels, side="right")
        vals = np.where(start < cells, suf[np.minimum(start, cells - 1)], 0.0)
        out = np.maximum(out, vals * family.cell_measure)
    return out


def _greedy_level(family, bound, j_max):
    """Smallest integer ``C >= 1`` with sup tail ``<= bound``, or None beyond ``j_max``."""
    if tail_integrals(family, [j_max])[0] > bound:
        return None
    lo, hi = 1, j_max
    if tail_integrals(family, [lo])[0] <= bound:
        return lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tail_integrals(family, [mid])[0] <= bound:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class ThresholdReport:
    """Outcome of threshold selection.

    ``status`` is ``"ok"``, ``"violation"`` (levels keep growing as the family
    is extended, the finite-sample signature of concentration), or
    ``"undetermined"`` (a tail bound is not met below ``j_max``).
    """

    status: str
    greedy: list
    thresholds: list
    doubling_constant: float
    extension_ratio: float
    tail_at_thresholds: list = field(default_factory=list)
    message: str = ""


def select_thresholds(family, m_max=M_MAX, j_max=J_MAX, inflation=2.0, probe_levels=3):
    """Integer levels ``C_m`` with ``sup_n int_{|f_n|>C_m} |f_n| <= 2^-m``.

    The greedy minimal levels are inflated to ``C_m >= inflation * C_{m-1}``
    (and kept strictly increasing).  Before accepting, the first
    ``probe_levels`` greedy levels are recomputed on the first half of the
    family: if extending the family raises them by more than 50%, the tails
    are not uniformly small and :class:`EquiIntegrabilityError` is raised
    with a ``"violation"`` report.  A level unreachable below ``j_max``
    raises with an ``"undetermined"`` report.
    """
    if m_max < 1:
        raise ContractViolation("m_max must be at least 1")
    greedy = []
    for m in range(1, m_max + 1):
        level = _greedy_level(family, 2.0**-m, j_max)
        if level is None:
            report = ThresholdReport("undetermined", greedy, [], np.nan, np.nan,
                                     message=f"level {m} not reached below j_max={j_max}")
            raise EquiIntegrabilityError(report.message, report)
        greedy.append(level)

    ratio = 1.0
    if family.members >= 2:
        half = family.head(family.members // 2)
        for m in range(1, min(probe_levels, m_max) + 1):
            level = _greedy_level(half, 2.0**-m, j_max)
            ratio = max(ratio, greedy[m - 1] / level)
    if ratio > 1.5:
        report = ThresholdReport(
            "violation", greedy, [], np.nan, ratio,
            message=f"tail levels grow by a factor {ratio:.3g} when the family is doubled",
        )
        raise EquiIntegrabilityError(report.message, report)

    levels = []
    for g in greedy:
        c = g
        if levels:
            c = max(c, levels[-1] + 1, int(np.ceil(inflation * levels[-1])))
        levels.append(int(c))
    tails = list(tail_integrals(family, levels))
    young = YoungFunction.from_thresholds(levels)
    return ThresholdReport("ok", greedy, levels, young.doubling_constant(), ratio, tails)


@dataclass(frozen=True)
class YoungFunction:
    """``Phi(t) = sum_k s_k (t - b_k)^+`` with non-negative increments ``s_k``.

    ``alphas[m]`` is the slope on ``(m, m+1]`` for ``m = 0..len(alphas)-1``.
    """

    breakpoints: np.ndarray
    increments: np.ndarray
    alphas: np.ndarray
    thresholds: tuple = ()

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        s = np.asarray(self.increments, dtype=float)
        if b.shape != s.shape or np.any(np.diff(b) < 0) or np.any(s < 0) or np.any(b < 0):
            raise ContractViolation("breakpoints must be sorted and increments non-negative")
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "increments", s)
        object.__setattr__(self, "alphas", np.asarray(self.alphas, dtype=float))

    @classmethod
    def from_thresholds(cls, thresholds):
        """``alpha_m = max{k : C_k <= m}`` (zero below ``C_1``)."""
        C = np.asarray(thresholds, dtype=np.int64)
        if C.ndim != 1 or C.size == 0 or C[0] < 1 or np.any(np.diff(C) <= 0):
            raise ContractViolation("thresholds must be strictly increasing positive integers")
        m = np.arange(min(int(C[-1]), 4096) + 1)
        alphas = np.searchsorted(C, m, side="right")
        return cls(C.astype(float), np.ones(C.size), alphas, tuple(int(c) for c in C))

    @classmethod
    def from_slopes(cls, alphas):
        """Slope ``alphas[m]`` on ``(m, m+1]``; linear beyond the last entry."""
        a = np.asarray(alphas, dtype=float)
        if np.any(a < 0) or np.any(np.diff(a) < 0):
            raise ContractViolation("slopes must be non-negative and non-decreasing")
        inc = np.diff(np.concatenate([[0.0], a]))
        keep = inc > 0
        return cls(np.arange(a.size, dtype=float)[keep], inc[keep], a)

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for b, s in zip(self.breakpoints, self.increments):
            out += s * np.maximum(t - b, 0.0)
        return out if out.ndim else float(out)

    def phi(self, s):
        """Right-continuous slope ``phi(s) = sum_{b_k < s} s_k``."""
        s = np.asarray(s, dtype=float)
        idx = np.searchsorted(self.breakpoints, s, side="left")
        cum = np.concatenate([[0.0], np.cumsum(self.increments)])
        return cum[idx]

    def alpha(self, m):
        """Slope on ``(m, m+1]`` for integer ``m``."""
        return self.phi(np.asarray(m, dtype=float) + 0.5)

    @property
    def first_breakpoint(self):
        return float(self.breakpoints[0]) if self.breakpoints.size else 0.0

    def doubling_constant(self):
        """``max alpha_{2m+1} / alpha_m`` over integers ``m`` with ``alpha_m > 0``.

        ``alpha_{2m+1}`` bounds the slope on ``(2m, 2m+2]``, which is the
        range ``phi(2s)`` sweeps for ``s`` in ``(m, m+1]``.  Both sides are
        step functions of ``m``, so it is enough to look where either jumps.
        """
        b = self.breakpoints
        cand = np.concatenate([np.floor(b), np.ceil(b), np.floor(b) - 1,
                               np.ceil((b - 1) / 2), np.floor((b - 1) / 2), [0.0]])
        cand = np.unique(cand[cand >= 0])
        a = self.alpha(cand)
        a2 = self.alpha(2 * cand + 1)
        mask = a > 0
        return float(np.max(a2[mask] / a[mask])) if np.any(mask) else np.nan

    def to_rows(self):
        return list(zip(self.breakpoints.tolist(), self.increments.tolist()))


def build_young(thresholds, m_max=M_MAX):
    """Young function of the thresholds plus its structural checks.

    Verifies ``alpha_m >= j  <=>  C_j <= m`` for all ``0 <= m <= m_max`` and
    all ``j`` up to the number of thresholds, and the proof inequality
    ``Phi(j + 1) <= sum_{m=1}^{j} alpha_m``.  Returns ``(Phi, checks)``.
    """
    phi = YoungFunction.from_thresholds(thresholds)
    C = np.asarray(thresholds, dtype=np.int64)
    m = np.arange(m_max + 1)
    alpha = phi.alpha(m)
    j = np.arange(1, C.size + 1)
    lhs = alpha[:, None] >= j[None, :]
    rhs = C[None, :] <= m[:, None]
    equivalence = bool(np.all(lhs == rhs))
    partial = np.cumsum(alpha)  # partial[j] = sum_{m=0}^{j} alpha_m, alpha_0 = 0 here
    values = phi(m[1:] + 1.0)
    chain = bool(np.all(values <= partial[1:] + 1e-9 * np.maximum(1.0, values)))
    checks = {
        "index_equivalence": equivalence,
        "proof_inequality": chain,
        "phi_at_zero": float(phi(0.0)),
        "phi_at_one": float(phi(1.0)),
        "m_max": int(m_max),
    }
    return phi, checks


@dataclass(frozen=True)
class Delta2Report:
    K: float
    t0: float
    t_max: float
    bound: float
    passed: bool
    worst_t: float


def delta2_verify(phi, t0=None, t_max=None, c=None, tol=1e-9):
    """Exact ``sup Phi(2t) / Phi(t)`` over ``[t0, t_max]`` where ``Phi(t) > 0``.

    Between consecutive points of ``{b_k, b_k / 2}`` both ``Phi(t)`` and
    ``Phi(2t)`` are affine, so their ratio is monotone and the supremum is
    attained at one of those points or at an end of the range.  ``t0``
    defaults to four times the first breakpoint (the doubling bound can only
    hold away from where ``Phi`` starts growing); ``c`` defaults to the
    doubling constant of the slopes and the pass criterion is ``K <= 2c``.
    """
    b = phi.breakpoints
    if t0 is None:
        t0 = max(1.0, 4.0 * phi.first_breakpoint)
    if t_max is None:
        t_max = max(4.0 * float(b[-1]) if b.size else 1.0, 2.0 * t0)
    if not t_max > t0:
        raise ContractViolation("empty t range")
    if c is None:
        c = phi.doubling_constant()
    pts = np.concatenate([[t0, t_max], b, b / 2])
    pts = np.unique(pts[(pts >= t0) & (pts <= t_max)])
    base = phi(pts)
    doubled = phi(2 * pts)
    positive = base > 0
    if np.any(~positive & (doubled > 0)):
        k = np.inf
        worst = float(pts[~positive & (doubled > 0)][0])
    elif not np.any(positive):
        k, worst = np.nan, float(t0)
    else:
        ratio = doubled[positive] / base[positive]
        k = float(ratio.max())
        worst = float(pts[positive][np.argmax(ratio)])
    bound = 2.0 * c
    passed = bool(np.isfinite(k) and k <= bound + tol)
    return Delta2Report(k, float(t0), float(t_max), bound, passed, worst)


def orlicz_bound(family, phi):
    """``sup_n int Phi(|f_n|)`` by cell quadrature."""
    vals = phi(np.abs(family.values))
    return float(np.max(vals.sum(axis=1)) * family.cell_measure)


def absolute_continuity_excess(family, phi, levels=None):
    """Largest excess of ``tail(C)`` over ``C / Phi(C) * sup_n int Phi(|f_n|)``.

    Convexity with ``Phi(0) = 0`` makes ``Phi(t)/t`` non-decreasing, so the
    excess is at most zero; a positive value signals an inconsistency.
    """
    if levels is None:
        levels = phi.breakpoints[phi.breakpoints > 0] * 2.0
    levels = np.asarray(levels, dtype=float)
    values = phi(levels)
    levels, values = levels[values > 0], values[values > 0]
    bound = orlicz_bound(family, phi)
    tails = tail_integrals(family, levels)
    return float(np.max(tails - levels / values * bound)) if levels.size else 0.0


def load_family_csv(path):
    """Read a family stored one member per column (optional header row)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    try:
        float(rows[0][0])
    except ValueError:
        rows = rows[1:]
    data = np.array([[float(v) for v in row] for row in rows if row])
    if data.ndim != 2 or data.shape[0] == 0:
        raise ContractViolation(f"{path}: no numeric rows")
    return SampleFamily(data.T, 1.0 / data.shape[0])


def write_young_csv(phi, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["breakpoint", "slope_increment"])
        for b, s in phi.to_rows():
            writer.writerow([f"{b:.17e}", f"{s:.17e}"])


class YoungFunctionEstimator(TransformerMixin, BaseEstimator):
    """Fit a Young function to a family given as columns of ``X``.

    ``fit(X)`` treats each column as one member sampled on equal cells of a
    unit-measure set; ``transform(X)`` returns ``Phi(|X|)``.

    Attributes
    ----------
    thresholds_ : ThresholdReport
    young_ : YoungFunction
    checks_ : dict
    delta2_ : Delta2Report
    bound_ : float
    """

    def __init__(self, m_max=M_MAX, j_max=J_MAX, inflation=2.0, probe_levels=3, t0=None):
        self.m_max = m_max
        self.j_max = j_max
        self.inflation = inflation
        self.probe_levels = probe_levels
        self.t0 = t0

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        self.n_features_in_ = X.shape[1]
        family = SampleFamily(X.T, 1.0 / X.shape[0])
        self.thresholds_ = select_thresholds(
            family, self.m_max, self.j_max, self.inflation, self.probe_levels
        )
        self.young_, self.checks_ = build_young(self.thresholds_.thresholds, self.m_max)
        self.delta2_ = delta2_verify(self.young_, t0=self.t0, c=self.thresholds_.doubling_constant)
        self.bound_ = orlicz_bound(family, self.young_)
        return self

    def transform(self, X):
        check_is_fitted(self, "young_")
        X = check_array(X, dtype=float)
        return self.young_(np.abs(X))
