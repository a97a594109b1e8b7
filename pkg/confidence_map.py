"""
File name: confidence_map.py

Description: Random-walk confidence maps. Every pixel gets the probability
that a random walker started there reaches the transducer row before the
bottom row, found by solving a Dirichlet problem on the 8-connected pixel
graph.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from errors import ConvergenceError, DimensionError
from geometry import PolarImage
from normalization import to_unit_range

DENSE_LIMIT_NODES = 64 * 64


@dataclass(frozen=True)
class ConfidenceParams:
    alpha: float = 2.0
    beta: float = 90.0
    gamma: float = 0.05
    solver_tol: float = 1e-8
    max_iters: int = 20000
    weight_floor: float = 1e-5

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.solver_tol <= 0:
            raise ValueError("solver_tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.weight_floor < 0:
            raise ValueError("weight_floor must be >= 0")


@dataclass(frozen=True)
class ConfidenceResult:
    values: np.ndarray
    residual: float
    iterations: int


def _as_array(img: PolarImage | np.ndarray) -> np.ndarray:
    data = img.data if isinstance(img, PolarImage) else np.asarray(img, dtype=np.float64)
    if data.ndim != 2:
        raise DimensionError(f"confidence_map expects a 2-D image, got shape {data.shape}")
    if data.shape[0] < 2 or data.shape[1] < 1:
        raise DimensionError(f"confidence_map needs at least 2 rows, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise DimensionError("confidence_map input contains non-finite values")
    if data.min() < 0:
        raise ValueError("confidence_map input must be nonnegative")
    return data


def graph_laplacian(data: np.ndarray, p: ConfidenceParams) -> sparse.csr_matrix:
    """
    Weighted Laplacian of the 8-connected lattice, nodes numbered row-major.

    w_ij = exp(-beta * (|g_i - g_j| + penalty_ij)) + weight_floor with
    g = I * exp(-alpha * depth), I min-max normalized and depth in [0, 1].
    """
    rows, cols = data.shape
    depth = np.linspace(0.0, 1.0, rows)[:, None]
    g = to_unit_range(data) * np.exp(-p.alpha * depth)
    index = np.arange(rows * cols).reshape(rows, cols)

    heads, tails, weights = [], [], []
    diagonal_penalty = p.gamma * np.sqrt(2.0)
    for d_row, d_col, penalty in ((1, 0, 0.0), (0, 1, p.gamma), (1, 1, diagonal_penalty), (1, -1, diagonal_penalty)):
        row_slice = slice(0, rows - d_row)
        col_slice = slice(max(0, -d_col), cols - max(0, d_col))
        shifted_cols = slice(max(0, d_col), cols - max(0, -d_col))
        a = index[row_slice, col_slice].ravel()
        b = index[d_row:, shifted_cols].ravel()
        diff = np.abs(g[row_slice, col_slice] - g[d_row:, shifted_cols]).ravel()
        heads.append(a)
        tails.append(b)
        weights.append(np.exp(-p.beta * (diff + penalty)) + p.weight_floor)

    i = np.concatenate(heads)
    j = np.concatenate(tails)
    w = np.concatenate(weights)
    n = rows * cols
    adjacency = sparse.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                                  shape=(n, n)).tocsr()
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    return (sparse.diags(degree) - adjacency).tocsr()


def _reduced_system(data: np.ndarray, p: ConfidenceParams):
    """Interior block of the Laplacian and the right-hand side from the seeded rows."""
    rows, cols = data.shape
    laplacian = graph_laplacian(data, p)
    interior = np.arange(cols, (rows - 1) * cols)
    top = np.arange(cols)
    system = laplacian[interior][:, interior].tocsr()
    # Bottom row is fixed to 0, so only the top seeds feed the right-hand side.
    rhs = -np.asarray(laplacian[interior][:, top].sum(axis=1)).ravel()
    return system, rhs


def _assemble(rows: int, cols: int, interior_values: np.ndarray) -> np.ndarray:
    out = np.zeros((rows, cols))
    out[0] = 1.0
    out[1:rows - 1] = interior_values.reshape(rows - 2, cols)
    return np.clip(out, 0.0, 1.0)


def solve_confidence(img: PolarImage | np.ndarray, p: ConfidenceParams) -> ConfidenceResult:
    """
    Solve the confidence map with Jacobi-preconditioned conjugate gradients.

    Args:
        img (PolarImage | np.ndarray): Frame with rows ordered by depth.
        p (ConfidenceParams): Weights and solver settings.

    Returns:
        ConfidenceResult: Map in [0, 1], relative residual and CG iterations.

    Raises:
        ConvergenceError: When the relative residual stays above solver_tol.
    """
    data = _as_array(img)
    rows, cols = data.shape
    if rows == 2:
        return ConfidenceResult(_assemble(rows, cols, np.empty(0)), 0.0, 0)

    system, rhs = _reduced_system(data, p)
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return ConfidenceResult(_assemble(rows, cols, np.zeros(system.shape[0])), 0.0, 0)

    preconditioner = sparse.diags(1.0 / system.diagonal())
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    solution, info = cg(system, rhs, rtol=p.solver_tol, atol=0.0, maxiter=p.max_iters,
                        M=preconditioner, callback=count)
    residual = float(np.linalg.norm(rhs - system @ solution) / rhs_norm)
    if info != 0:
        raise ConvergenceError("Confidence map solver did not reach solver_tol", residual, iterations)
    return ConfidenceResult(_assemble(rows, cols, solution), residual, iterations)


def confidence_map(img: PolarImage | np.ndarray, p: ConfidenceParams) -> np.ndarray:
    """Confidence map values in [0, 1]; row 0 is 1 and the last row is 0."""
    return solve_confidence(img, p).values


def confidence_map_dense(img: PolarImage | np.ndarray, p: ConfidenceParams) -> np.ndarray:
    """Same system solved directly with a dense factorization (small lattices only)."""
    data = _as_array(img)
    rows, cols = data.shape
    if rows * cols > DENSE_LIMIT_NODES:
        raise DimensionError(f"Dense solve is limited to {DENSE_LIMIT_NODES} pixels, got {rows * cols}")
    if rows == 2:
        return _assemble(rows, cols, np.empty(0))
    system, rhs = _reduced_system(data, p)
    return _assemble(rows, cols, np.linalg.solve(system.toarray(), rhs))
