"""Resolvent amplitudes, sliced interactions and sigma-field Monte Carlo.

Matrix conventions: an operator A with kernel K(x,y) sampled on the grid is
handled through its measure-absorbed matrix G = h^2 K, so that operator
composition is plain matmul, the identity operator is the identity matrix,
Tr A = trace(G), and the multiplication operator by a field sigma is
diag(sigma).  Kernel values are recovered as G/h^2.

The intermediate-field representation used throughout is

    Z = E_sigma[exp(3 lam T^2 + 2i sqrt(lam) T Tr sigma
                    - (1/2) Tr log2(1 + 2i sqrt(lam) C sigma))]

with log2(1+x) = log(1+x) - x and sigma ultralocal (i.i.d. cells of
variance 1/h^2).  On the grid this identity is exact, not approximate: the
per-cell Hubbard-Stratonovich transformation reproduces the discretized
phi-measure determinant identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graphs import IFGraph
from .propagator import DiscretizedOperator, Grid, SliceFamily, single_slice_matrix, tadpole

__all__ = [
    "CouplingPoint",
    "SigmaField",
    "MCEstimate",
    "SliceOperators",
    "sample_sigma",
    "resolvent",
    "resolvent_norm_symmetrized",
    "graph_kernel_value",
    "graph_amplitude",
    "interaction_V",
    "interaction_Vj",
    "interaction_V_grad",
    "gaussian_expectation",
    "order1_cancellation",
    "wick_oracle",
    "sigma_action_log2_form",
    "sigma_action_log_form",
    "logz_sigma_mc",
    "phi_action_wick",
    "logz_phi_quadrature",
    "z_phi_mc",
]

CONDITION_LIMIT = 1e12


class NumericInstability(ArithmeticError):
    """Resolvent solve or matrix logarithm left its validity domain."""


@dataclass(frozen=True)
class CouplingPoint:
    """Coupling lambda = |lambda| e^{i phi} with phi strictly inside (-pi, pi)."""

    lambda_modulus: float
    phi: float = 0.0

    def __post_init__(self):
        if self.lambda_modulus < 0:
            raise ValueError("coupling modulus must be >= 0")
        if not -math.pi < self.phi < math.pi:
            raise ValueError("phi must lie strictly inside (-pi, pi)")

    @property
    def lam(self) -> complex:
        return self.lambda_modulus * complex(math.cos(self.phi),
                                             math.sin(self.phi))

    @property
    def sqrt_lam(self) -> complex:
        r = math.sqrt(self.lambda_modulus)
        return r * complex(math.cos(self.phi / 2), math.sin(self.phi / 2))


@dataclass
class SigmaField:
    """One sample of the ultralocal field: i.i.d. cells of variance 1/h^2."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.npoints,):
            raise ValueError("sigma values must live on the grid cells")


@dataclass(frozen=True)
class MCEstimate:
    mean: complex
    stderr: float
    samples: int

    def agrees_with(self, other: "MCEstimate", nsigma: float = 3.0) -> bool:
        err = math.hypot(self.stderr, other.stderr)
        return abs(self.mean - other.mean) <= nsigma * max(err, 1e-300)


def sample_sigma(grid: Grid, rng) -> SigmaField:
    return SigmaField(grid, rng.normal(scale=1.0 / grid.h, size=grid.npoints))


class SliceOperators:
    """Precomputed measure-absorbed slice matrices for one (family, grid)."""

    def __init__(self, family: SliceFamily, grid: Grid):
        self.family = family
        self.grid = grid
        h2 = grid.h ** 2
        self.G = [single_slice_matrix(family, j, grid) * h2
                  for j in family.slice_indices]
        self.T = [tadpole(family, j) for j in family.slice_indices]
        self._sqrt_cache: dict = {}

    def t_vector(self, t=None) -> np.ndarray:
        if t is None:
            return np.ones(self.family.j_max + 1)
        t = np.asarray(t, dtype=float)
        if t.shape != (self.family.j_max + 1,):
            raise ValueError("t must assign one weight per slice")
        return t

    def G_C(self, t=None) -> np.ndarray:
        t = self.t_vector(t)
        out = np.zeros_like(self.G[0])
        for tj, Gj in zip(t, self.G):
            if tj:
                out += tj * Gj
        return out

    def T_total(self, t=None) -> float:
        t = self.t_vector(t)
        return float(np.dot(t, self.T))

    def sqrt_C(self, t=None) -> np.ndarray:
        t = self.t_vector(t)
        key = tuple(np.round(t, 14))
        hit = self._sqrt_cache.get(key)
        if hit is not None:
            return hit
        lam, U = np.linalg.eigh(self.G_C(t))
        lam = np.clip(lam, 0.0, None)
        S = (U * np.sqrt(lam)) @ U.T
        self._sqrt_cache[key] = S
        return S


def resolvent_gmat(sigma_values, G_C, sqrt_lam, check=True):
    """G-matrix of R = (1 + 2i sqrt(lam) C sigma)^{-1}; batched over leading axes."""
    sig = np.asarray(sigma_values)
    A = 2j * sqrt_lam * (G_C * sig[..., None, :])
    A += np.eye(G_C.shape[0])
    out = np.linalg.inv(A)
    if check:
        conds = np.linalg.cond(A) if A.ndim == 2 else np.linalg.cond(A).max()
        if not np.isfinite(conds) or conds > CONDITION_LIMIT:
            raise NumericInstability(
                f"resolvent system condition estimate {conds:.3e}")
    return out


def resolvent(sigma: SigmaField, C: DiscretizedOperator,
              coupling: CouplingPoint) -> DiscretizedOperator:
    """R(sigma) = (1 + 2i sqrt(lam) C sigma)^{-1} as a discretized operator."""
    G_R = resolvent_gmat(sigma.values, C.gmat, coupling.sqrt_lam)
    return DiscretizedOperator(C.grid, G_R / C.weight,
                               meta={**C.meta, "resolvent": True})


def resolvent_norm_symmetrized(sigma_values, sqrt_C, sqrt_lam) -> float:
    """Spectral norm of (1 + 2i sqrt(lam) C^(1/2) sigma C^(1/2))^{-1}."""
    B = sqrt_C @ (sigma_values[:, None] * sqrt_C)
    A = np.eye(len(B)) + 2j * sqrt_lam * B
    s = np.linalg.svd(np.linalg.inv(A), compute_uv=False)
    return float(s[0])


# -- graph amplitudes ----------------------------------------------------------

def _corner_matrix(corner, ops: SliceOperators, G_R, t):
    if corner.kind == "full":
        spec = ops.G_C(t)
    else:
        spec = ops.G[corner.slice_index]
    if corner.tag == "clean":
        M = spec
    elif corner.tag == "R":
        M = G_R @ spec
    else:  # Rm1
        M = (G_R - np.eye(len(spec))) @ spec
    return np.conj(M) if corner.conj else M


def graph_kernel_value(g: IFGraph, t, sigma: SigmaField,
                       coupling: CouplingPoint, ops: SliceOperators,
                       rho_coupling=None) -> complex:
    """Position-integrated product of the corner kernels of a graph.

    Every sigma-edge contributes one integrated position; bare slots are
    plain composition points and integrate the same way without a coupling
    factor.  No coupling prefactors are applied here.
    """
    G_R = None
    if any(c.tag != "clean" for c in g.corners):
        G_R = resolvent_gmat(sigma.values, ops.G_C(t), coupling.sqrt_lam)

    # assign a position index to every edge and every bare slot
    eos = g.edge_of_slot()
    positions = {}
    for e in g.edges:
        positions[e] = len(positions)
    for s in g.slots:
        if s not in eos:
            positions[("bare", s)] = len(positions)

    def pos_of_slot(s):
        e = eos.get(s)
        return positions[e] if e is not None else positions[("bare", s)]

    soe = g.slot_of_end()
    letters = "abcdefghijklmnopqrstuvwxyz"
    operands, script = [], []
    for ci, c in enumerate(g.corners):
        M = _corner_matrix(c, ops, G_R, t)
        pa = pos_of_slot(soe[(ci, 0)])
        pb = pos_of_slot(soe[(ci, 1)])
        operands.append(M)
        script.append(letters[pa] + letters[pb])
    if not operands:
        return 1.0 + 0j
    total = np.einsum(",".join(script) + "->", *operands, optimize=True)
    h2 = ops.grid.h ** 2
    npos = len(positions)
    ncorn = len(g.corners)
    return complex(total) * h2 ** (npos - ncorn)


def graph_amplitude(g: IFGraph, t, sigma: SigmaField, coupling: CouplingPoint,
                    family: SliceFamily, grid: Grid,
                    ops: SliceOperators = None) -> complex:
    """Resolvent amplitude: (-lam)^order times the kernel product.

    The slice-testing contribution of the graph is
    weight * lam^order * kernel product = weight * (-1)^order * amplitude.
    """
    if ops is None:
        ops = SliceOperators(family, grid)
    for c in g.corners:
        if c.kind == "slice" and not 0 <= c.slice_index <= family.j_max:
            raise IndexError(f"slice mark {c.slice_index} outside family range")
    if ops.grid != sigma.grid:
        raise ValueError("sigma grid differs from operator grid")
    val = graph_kernel_value(g, t, sigma, coupling, ops)
    return (-coupling.lam) ** g.order * val


# -- interaction pieces ---------------------------------------------------------

def _tr_log2_batched(sig_batch, S, G_C, sqrt_lam):
    """Tr log2(1 + 2i sqrt(lam) C sigma) for a batch of sigma vectors.

    Uses the Hermitian similarity C sigma ~ C^(1/2) sigma C^(1/2): the
    eigenvalues mu are real, each factor 1 + 2i sqrt(lam) mu stays off the
    branch cut for |phi| < pi, and Tr log - Tr X follows per eigenvalue.
    """
    sig = np.atleast_2d(sig_batch)
    B = np.einsum("xy,sy,yz->sxz", S, sig, S, optimize=True)
    mu = np.linalg.eigvalsh(B)
    z = 1.0 + 2j * sqrt_lam * mu
    if np.any(z == 0):
        raise NumericInstability("eigenvalue on the logarithm branch cut")
    tr_log = np.log(z).sum(axis=1)
    tr_x = 2j * sqrt_lam * np.einsum("xx,sx->s", G_C, sig, optimize=True)
    out = tr_log - tr_x
    return out if np.ndim(sig_batch) == 2 else complex(out[0])


def interaction_V(t, sigma_values, coupling: CouplingPoint,
                  ops: SliceOperators):
    """V(t) = Tr[3 lam T(t)^2 + 2i sqrt(lam) T(t) sigma - (1/2) log2(...)].

    Batched over a leading sample axis of sigma_values.
    """
    t = ops.t_vector(t)
    lam, slam = coupling.lam, coupling.sqrt_lam
    T = ops.T_total(t)
    h2 = ops.grid.h ** 2
    sig = np.atleast_2d(np.asarray(sigma_values, dtype=float))
    tr_sigma = h2 * sig.sum(axis=1)
    log2_tr = _tr_log2_batched(sig, ops.sqrt_C(t), ops.G_C(t), slam)
    log2_tr = np.atleast_1d(log2_tr)
    out = 3 * lam * T ** 2 + 2j * slam * T * tr_sigma - 0.5 * log2_tr
    return out if np.ndim(sigma_values) == 2 else complex(out[0])


def interaction_V_cumulative(j, t, sigma_values, coupling, ops):
    """V_{<=j}: the interaction with slices above j switched off."""
    t = ops.t_vector(t).copy()
    t[j + 1:] = 0.0
    return interaction_V(t, sigma_values, coupling, ops)


def interaction_Vj(j: int, t, sigma: SigmaField, coupling: CouplingPoint,
                   family: SliceFamily, grid: Grid, ops: SliceOperators = None,
                   u_nodes: int = 8) -> complex:
    """V_j = V_{<=j} - V_{<=j-1} via the factorized u_j-quadrature form:

        int_0^1 t_j du [6 lam T_j T_{<=j}(t,u) + 2i sqrt(lam) T_j Tr sigma
                        - i sqrt(lam) Tr (R_{<=j}(t,u) - 1) C_j sigma]

    with one resolvent solve per Gauss-Legendre node.
    """
    if ops is None:
        ops = SliceOperators(family, grid)
    family.check_index(j)
    t = ops.t_vector(t)
    lam, slam = coupling.lam, coupling.sqrt_lam
    h2 = ops.grid.h ** 2
    sig = sigma.values
    tj = t[j]
    if tj == 0.0:
        return 0.0 + 0j
    xs, ws = np.polynomial.legendre.leggauss(u_nodes)
    xs = (xs + 1.0) / 2.0
    ws = ws / 2.0
    tr_sigma = h2 * sig.sum()
    total = 0.0 + 0j
    for u, w in zip(xs, ws):
        tu = t.copy()
        tu[j] *= u
        tu[j + 1:] = 0.0
        T_le = ops.T_total(tu)
        G_le = ops.G_C(tu)
        G_R = resolvent_gmat(sig, G_le, slam, check=False)
        Rm1Cj = (G_R - np.eye(len(G_le))) @ ops.G[j]
        # Tr[(R-1) C_j sigma] = sum_x [(R-1)C_j]_G[x,x] sigma_x
        term = (6 * lam * ops.T[j] * T_le
                + 2j * slam * ops.T[j] * tr_sigma
                - 1j * slam * complex(np.einsum("xx,x->", Rm1Cj, sig)))
        total += w * tj * term
    return complex(total)


def interaction_V_grad(t, sigma_values, coupling: CouplingPoint,
                       ops: SliceOperators, G_R=None):
    """Grid gradient dV/dsigma_i of the full interaction at one sample."""
    t = ops.t_vector(t)
    lam, slam = coupling.lam, coupling.sqrt_lam
    h2 = ops.grid.h ** 2
    G_C = ops.G_C(t)
    if G_R is None:
        G_R = resolvent_gmat(sigma_values, G_C, slam, check=False)
    Rm1C = (G_R - np.eye(len(G_C))) @ G_C
    return 2j * slam * ops.T_total(t) * h2 - 1j * slam * np.diagonal(
        Rm1C, axis1=-2, axis2=-1)


# -- Gaussian expectations -------------------------------------------------------

def gaussian_expectation(f, X, grid: Grid, samples: int, rng,
                         antithetic: bool = True) -> MCEstimate:
    """Monte Carlo of E[f(sigma_1..sigma_r)] over correlated replica fields.

    Cov(sigma_a(x) sigma_b(y)) = X[a,b] delta_cells(x,y) / h^2, realized by
    the symmetric square root of X acting on i.i.d. cell fields.  f receives
    an (r, npoints) array.  Antithetic pairs (sigma, -sigma) kill odd
    moments exactly.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lamX, U = np.linalg.eigh(X)
    if lamX.min() < -1e-10:
        raise ValueError(f"replica covariance not PSD: min eig {lamX.min()}")
    L = (U * np.sqrt(np.clip(lamX, 0, None))) @ U.T
    r = X.shape[0]
    vals = np.empty(samples, dtype=complex)
    for s in range(samples):
        xi = rng.normal(scale=1.0 / grid.h, size=(r, grid.npoints))
        sig = L @ xi
        if antithetic:
            vals[s] = 0.5 * (f(sig) + f(-sig))
        else:
            vals[s] = f(sig)
    mean = vals.mean()
    err = vals.std(ddof=1) / math.sqrt(samples) if samples > 1 else math.inf
    return MCEstimate(complex(mean), float(err), samples)


# -- Wick oracle and sigma-representation action ----------------------------------

def wick_oracle(order: int, family: SliceFamily, grid: Grid) -> float:
    """Perturbative coefficients of log Z in lambda by exhaustive Wick pairing.

    Order 1 vanishes identically (Wick ordering).  Order 2 is
    3 int int C(x,y)^4 dx dy: only complete contractions of two
    normal-ordered quartic vertices survive, 4! pairings, and
    (1/2!)(1/2)^2 * 2 * 4! = 3.
    """
    if order == 1:
        return 0.0
    if order != 2:
        raise ValueError("wick oracle implemented at orders 1 and 2")
    ops = SliceOperators(family, grid)
    G = ops.G_C(None)
    h2 = grid.h ** 2
    K = G / h2
    return float(3.0 * h2 ** 2 * np.sum(K ** 4))


def sigma_action_log2_form(sigma_values, coupling, ops: SliceOperators):
    """Exponent of the log2 form of the sigma representation (t = 1)."""
    return interaction_V(None, sigma_values, coupling, ops)


def sigma_action_log_form(sigma_values, coupling, ops: SliceOperators):
    """Exponent of the plain-log form: 3 lam T^2 + 3i sqrt(lam) T Tr sigma
    - (1/2) Tr log(1 + 2i sqrt(lam) C sigma).  Equal to the log2 form
    pointwise in sigma because Tr C sigma = Tr T sigma exactly on the grid."""
    lam, slam = coupling.lam, coupling.sqrt_lam
    T = ops.T_total(None)
    h2 = ops.grid.h ** 2
    sig = np.atleast_2d(np.asarray(sigma_values, dtype=float))
    tr_sigma = h2 * sig.sum(axis=1)
    S = ops.sqrt_C(None)
    B = np.einsum("xy,sy,yz->sxz", S, sig, S, optimize=True)
    mu = np.linalg.eigvalsh(B)
    tr_log = np.log(1.0 + 2j * slam * mu).sum(axis=1)
    out = 3 * lam * T ** 2 + 3j * slam * T * tr_sigma - 0.5 * tr_log
    return out if np.ndim(sigma_values) == 2 else complex(out[0])


def logz_sigma_mc(coupling: CouplingPoint, family: SliceFamily, grid: Grid,
                  samples: int, seed: int, ops: SliceOperators = None) -> MCEstimate:
    """log of the sigma-representation partition function by direct MC."""
    if ops is None:
        ops = SliceOperators(family, grid)
    rng = np.random.default_rng(seed)
    batch = rng.normal(scale=1.0 / grid.h, size=(samples, grid.npoints))
    va = interaction_V(None, batch, coupling, ops)
    vb = interaction_V(None, -batch, coupling, ops)
    vals = 0.5 * (np.exp(va) + np.exp(vb))
    z = vals.mean()
    zerr = vals.std(ddof=1) / math.sqrt(samples)
    # delta method for log Z
    return MCEstimate(complex(np.log(z)), float(abs(zerr / z)), samples)


# -- direct phi-side checks -------------------------------------------------------

def phi_action_wick(phi, lam: complex, T: float, h2: float):
    """-(lam/2) h^2 sum_x :phi^4:(x) with :phi^4: = phi^4 - 6 T phi^2 + 3 T^2."""
    p2 = phi ** 2
    return -(lam / 2.0) * h2 * (p2 ** 2 - 6.0 * T * p2 + 3.0 * T ** 2).sum(axis=-1)


def logz_phi_quadrature(coupling: CouplingPoint, family: SliceFamily,
                        grid: Grid, nodes: int = 20) -> float:
    """log Z by tensor Gauss-Hermite quadrature over the discretized phi field.

    Exact up to quadrature truncation; tractable only for tiny grids
    (N = 2 gives 4 coupled Gaussian dimensions).
    """
    ops = SliceOperators(family, grid)
    n = grid.npoints
    if n > 9:
        raise ValueError("tensor quadrature is only feasible for N <= 3")
    cov = ops.G_C(None) / grid.h ** 2  # kernel matrix C(x_i, x_k)
    lamc, U = np.linalg.eigh(cov)
    lamc = np.clip(lamc, 0, None)
    A = U * np.sqrt(lamc)  # phi = A xi with xi standard normal
    T = ops.T_total(None)
    xs, ws = np.polynomial.hermite_e.hermegauss(nodes)
    ws = ws / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([xs] * n), indexing="ij")
    wgrids = np.meshgrid(*([ws] * n), indexing="ij")
    xi = np.stack([g.ravel() for g in grids], axis=-1)
    wgt = np.ones(len(xi))
    for wg in wgrids:
        wgt = wgt * wg.ravel()
    phi = xi @ A.T
    act = phi_action_wick(phi, coupling.lam, T, grid.h ** 2)
    return float(np.log(np.real((wgt * np.exp(act)).sum())))


def z_phi_mc(coupling: CouplingPoint, family: SliceFamily, grid: Grid,
             samples: int, seed: int) -> MCEstimate:
    """Z by Monte Carlo over the discretized Gaussian phi measure."""
    ops = SliceOperators(family, grid)
    cov = ops.G_C(None) / grid.h ** 2
    lamc, U = np.linalg.eigh(cov)
    A = U * np.sqrt(np.clip(lamc, 0, None))
    T = ops.T_total(None)
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=(samples, grid.npoints))
    phi = xi @ A.T
    vals = np.exp(phi_action_wick(phi, coupling.lam, T, grid.h ** 2))
    vals = 0.5 * (vals + np.exp(phi_action_wick(-phi, coupling.lam, T,
                                                grid.h ** 2)))
    return MCEstimate(complex(vals.mean()),
                      float(vals.std(ddof=1) / math.sqrt(samples)), samples)


# -- order-1 cancellation ----------------------------------------------------------

def order1_cancellation(j1: int, coupling: CouplingPoint, family: SliceFamily,
                        grid: Grid, samples: int, seed: int,
                        ops: SliceOperators = None):
    """Both sides of the first slice-testing derivative, each by its own MC.

    lhs: E[e^V Tr(6 lam T_j T + 2i sqrt(lam) T_j sigma
                  - i sqrt(lam) C_j sigma (R - 1))]  (pre-integration form)
    rhs: -3 lam E[e^V Tr_x [(R-1)C_j](x,x) [(R-1)C](x,x)]

    evaluated at t = 1.  The two independent sample streams are each
    other's oracle; agreement realizes the Gaussian integration by parts
    and tadpole-counterterm cancellation numerically.
    """
    if ops is None:
        ops = SliceOperators(family, grid)
    family.check_index(j1)
    lam, slam = coupling.lam, coupling.sqrt_lam
    h2 = grid.h ** 2
    n = grid.npoints
    T = ops.T_total(None)
    Tj = ops.T[j1]
    G_C = ops.G_C(None)

    def lhs_fn(sig):
        v = interaction_V(None, sig, coupling, ops)
        G_R = resolvent_gmat(sig, G_C, slam, check=False)
        Rm1 = G_R - np.eye(n)
        # Tr C_j sigma (R-1) = sum_x [(R-1) C_j]_G[x,x] sigma_x
        tr_csr = complex(np.einsum("xx,x->", Rm1 @ ops.G[j1], sig))
        tr_sig = h2 * sig.sum()
        return np.exp(v) * (6 * lam * Tj * T + 2j * slam * Tj * tr_sig
                            - 1j * slam * tr_csr)

    def rhs_fn(sig):
        v = interaction_V(None, sig, coupling, ops)
        G_R = resolvent_gmat(sig, G_C, slam, check=False)
        Rm1 = G_R - np.eye(n)
        da = np.diagonal(Rm1 @ ops.G[j1])
        db = np.diagonal(Rm1 @ G_C)
        val = np.dot(da, db) / h2
        return np.exp(v) * (-3.0) * lam * val

    rng_l = np.random.default_rng(seed)
    rng_r = np.random.default_rng(seed + 777001)
    lhs = gaussian_expectation(lambda s: lhs_fn(s[0]), np.eye(1), grid,
                               samples, rng_l)
    rhs = gaussian_expectation(lambda s: rhs_fn(s[0]), np.eye(1), grid,
                               samples, rng_r)
    return lhs, rhs
