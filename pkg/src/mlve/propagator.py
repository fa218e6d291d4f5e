"""Sliced covariance kernels of the massive 2D free field on the unit square.

The covariance is decomposed over parametric-integral slices with scale ratio
M: slice j >= 1 integrates alpha over [M^(-2j), M^(-2(j-1))], slice 0 over
[1, inf).  Kernels depend on the points only through their separation, which
is what makes grid discretization cheap (one quadrature per distinct
separation).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate

__all__ = [
    "SliceFamily",
    "Grid",
    "DiscretizedOperator",
    "slice_kernel",
    "slice_kernel_r",
    "tadpole",
    "tadpole_cumulative",
    "decay_fit",
    "discretize",
    "kernel_table_csv",
    "save_operator",
    "load_operator",
]

QUAD_RELTOL = 1e-10
# j=0 improper integral is truncated where the integrand drops below 1e-16 of
# its peak; see _alpha_upper.
TRUNC_DECADES = 16.0 * math.log(10.0)


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


@dataclass(frozen=True)
class SliceFamily:
    """Slice decomposition parameters: ratio M, UV cutoff j_max, mass, prefactor."""

    M: int
    j_max: int
    mass: float
    prefactor: float = 1.0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"slice ratio M must be >= 2, got {self.M}")
        if self.j_max < 0:
            raise ValueError(f"j_max must be >= 0, got {self.j_max}")
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")

    @property
    def slice_indices(self) -> range:
        return range(self.j_max + 1)

    def check_index(self, j: int) -> None:
        if not 0 <= j <= self.j_max:
            raise IndexError(f"slice index {j} outside [0, {self.j_max}]")

    def alpha_window(self, j: int) -> tuple[float, float]:
        """Parametric-integral window of slice j (upper end inf for j=0)."""
        self.check_index(j)
        if j == 0:
            return 1.0, math.inf
        M = float(self.M)
        return M ** (-2 * j), M ** (-2 * (j - 1))


@dataclass(frozen=True)
class Grid:
    """N x N midpoint grid on [0,1]^2; cell weight h^2 sums to unit area."""

    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"grid size must be >= 1, got {self.N}")

    @property
    def h(self) -> float:
        return 1.0 / self.N

    @property
    def npoints(self) -> int:
        return self.N * self.N

    @property
    def points(self) -> np.ndarray:
        """Cell centers, shape (N^2, 2), row-major in (ix, iy)."""
        c = (np.arange(self.N) + 0.5) * self.h
        xx, yy = np.meshgrid(c, c, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def separation_matrix(self) -> np.ndarray:
        p = self.points
        d = p[:, None, :] - p[None, :, :]
        return np.sqrt((d ** 2).sum(axis=2))


@dataclass
class DiscretizedOperator:
    """Integral operator sampled on a grid: entries[i,k] = K(x_i, x_k).

    Composition carries the measure factor h^2 so that (A o B) approximates
    kernel composition; trace(A) = h^2 sum_i K(x_i, x_i) approximates Tr A.
    """

    grid: Grid
    entries: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.grid.npoints
        if self.entries.shape != (n, n):
            raise ValueError(f"entries shape {self.entries.shape} != ({n},{n})")

    @property
    def weight(self) -> float:
        return self.grid.h ** 2

    def compose(self, other: "DiscretizedOperator") -> "DiscretizedOperator":
        if other.grid != self.grid:
            raise ValueError("operator grids differ")
        return DiscretizedOperator(self.grid, self.weight * (self.entries @ other.entries))

    def trace(self) -> complex:
        return self.weight * np.trace(self.entries)

    @property
    def gmat(self) -> np.ndarray:
        """Measure-absorbed matrix h^2*K; these compose by plain matmul."""
        return self.entries * self.weight


def _alpha_upper(mass: float, rsq: float) -> float:
    """Truncation point for the j=0 improper integral (integrand < 1e-16 of peak)."""
    return 1.0 + (TRUNC_DECADES + rsq / 4.0) / mass ** 2


def _kernel_quad(lo: float, hi: float, mass: float, rsq: float) -> float:
    """int_lo^hi exp(-a m^2 - r^2/(4a)) da/a by adaptive quadrature on log a."""
    m2 = mass ** 2
    if not math.isfinite(hi):
        hi = _alpha_upper(mass, rsq)

    def f(u):
        a = math.exp(u)
        return math.exp(-a * m2 - rsq / (4.0 * a))

    val, err = integrate.quad(f, math.log(lo), math.log(hi),
                              epsabs=0.0, epsrel=QUAD_RELTOL, limit=200)
    if val != 0.0 and err > 100 * QUAD_RELTOL * abs(val):
        raise QuadratureError(
            f"slice quadrature error {err:.3e} for value {val:.3e} "
            f"(lo={lo}, hi={hi}, m={mass}, r^2={rsq})")
    return val


@lru_cache(maxsize=None)
def _kernel_r_cached(family: SliceFamily, j: int, rsq: float) -> float:
    lo, hi = family.alpha_window(j)
    return family.prefactor * _kernel_quad(lo, hi, family.mass, rsq)


def slice_kernel_r(family: SliceFamily, j: int, r: float) -> float:
    """Slice kernel as a function of the separation r = |x - y|."""
    return _kernel_r_cached(family, j, float(r) ** 2)


def slice_kernel(family: SliceFamily, j: int, x, y) -> float:
    """C_j(x, y) for points of [0,1]^2; symmetric and strictly positive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rsq = float(((x - y) ** 2).sum())
    return _kernel_r_cached(family, j, rsq)


def tadpole(family: SliceFamily, j: int) -> float:
    """T_j = C_j(x, x); independent of x."""
    return slice_kernel_r(family, j, 0.0)


def tadpole_cumulative(family: SliceFamily, j: int) -> float:
    """T_{<=j} = sum_{k<=j} T_k."""
    family.check_index(j)
    return sum(tadpole(family, k) for k in range(j + 1))


def cumulative_kernel_r(family: SliceFamily, j: int, r: float) -> float:
    """C_{<=j}(r) = sum_{k<=j} C_k(r), a single integral over [M^(-2j), inf)."""
    family.check_index(j)
    lo = float(family.M) ** (-2 * j)
    return family.prefactor * _kernel_quad(lo, math.inf, family.mass, float(r) ** 2)


def decay_fit(family: SliceFamily, j: int, n_sep: int = 200, c: float = 0.25):
    """Fit the smallest K_j with C_j(r) <= K_j exp(-c M^j r) on a separation scan.

    The exponent c is fixed (heat-kernel exponent with alpha at the top of the
    slice window); only the prefactor is fitted.  Returns (K_j, c).
    """
    family.check_index(j)
    if j < 1:
        raise IndexError("decay fit applies to UV slices j >= 1")
    rs = np.linspace(0.0, math.sqrt(2.0), n_sep)
    rate = c * float(family.M) ** j
    vals = np.array([slice_kernel_r(family, j, r) * math.exp(rate * r) for r in rs])
    k = int(np.argmax(vals))
    K = float(vals[k])
    if not math.isfinite(K):
        raise ArithmeticError(f"decay fit diverged at separation {rs[k]:.4f}")
    return K, c


def _weights_from_jset(family: SliceFamily, j_set) -> np.ndarray:
    """Resolve a slice selector to a per-slice weight vector t in [0,1]^{j_max+1}.

    Accepts None (all slices), "<=j" (cumulative), a dict {j: t_j}, or an
    iterable of slice indices (weight 1 each).
    """
    t = np.zeros(family.j_max + 1)
    if j_set is None:
        t[:] = 1.0
    elif isinstance(j_set, str):
        if not j_set.startswith("<="):
            raise ValueError(f"unrecognized slice selector {j_set!r}")
        j = int(j_set[2:])
        family.check_index(j)
        t[: j + 1] = 1.0
    elif isinstance(j_set, dict):
        for j, tj in j_set.items():
            family.check_index(int(j))
            t[int(j)] = float(tj)
    else:
        for j in np.atleast_1d(list(j_set)):
            family.check_index(int(j))
            t[int(j)] = 1.0
    if np.any(t < 0) or np.any(t > 1):
        raise ValueError("slice weights must lie in [0, 1]")
    return t


def single_slice_matrix(family: SliceFamily, j: int, grid: Grid) -> np.ndarray:
    """Kernel matrix C_j(x_i, x_k) over grid cell centers."""
    family.check_index(j)
    N = grid.N
    # displacement classes: (|dx|, |dy|) in cell units
    d = np.arange(N)
    dx, dy = np.meshgrid(d, d, indexing="ij")
    rsq_class = (dx ** 2 + dy ** 2) * grid.h ** 2
    uniq, inv = np.unique(np.round(rsq_class, 15), return_inverse=True)
    vals = np.array([_kernel_r_cached(family, j, float(u)) for u in uniq])
    block = vals[inv].reshape(N, N)

    idx = np.arange(N)
    ax = np.abs(idx[:, None] - idx[None, :])
    # kernel between cells (ix,iy),(kx,ky) keyed by (|ix-kx|, |iy-ky|)
    K = block[ax[:, None, :, None], ax[None, :, None, :]]
    return K.reshape(N * N, N * N)


def discretize(family: SliceFamily, j_set, grid: Grid) -> DiscretizedOperator:
    """Assemble sum_j t_j C_j on the grid.

    j_set may be an iterable of slice indices (weight 1 each), a string
    "<=j" for the cumulative kernel, a full weight vector t of length
    j_max+1, or None for all slices.
    """
    t = _weights_from_jset(family, j_set)
    n = grid.npoints
    K = np.zeros((n, n))
    for j, tj in enumerate(t):
        if tj != 0.0:
            K += tj * single_slice_matrix(family, j, grid)
    return DiscretizedOperator(grid, K, meta={
        "N": grid.N, "M": family.M, "j_max": family.j_max,
        "m": family.mass, "prefactor": family.prefactor, "t": list(map(float, t)),
    })


def kernel_table_csv(family: SliceFamily, path, n_sep: int = 50) -> None:
    """Write (j, |x-y|, value) rows for every slice of the family."""
    rs = np.linspace(0.0, math.sqrt(2.0), n_sep)
    with open(path, "w") as fh:
        fh.write("j,separation,value\n")
        for j in family.slice_indices:
            for r in rs:
                fh.write(f"{j},{r:.12g},{slice_kernel_r(family, j, r):.16g}\n")


def save_operator(op: DiscretizedOperator, path) -> None:
    """Dense binary dump (row-major little-endian float64) with a JSON sidecar."""
    arr = np.ascontiguousarray(op.entries.real, dtype="<f8")
    arr.tofile(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump({"shape": list(arr.shape), "dtype": "<f8", **op.meta}, fh,
                  sort_keys=True, indent=1)


def load_operator(path) -> DiscretizedOperator:
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    n = meta["shape"][0]
    entries = np.fromfile(path, dtype="<f8").reshape(meta["shape"])
    grid = Grid(int(math.isqrt(n)))
    return DiscretizedOperator(grid, entries, meta=meta)
