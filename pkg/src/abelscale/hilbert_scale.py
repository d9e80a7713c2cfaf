"""Finite-difference scale operators and the Tikhonov penalty matrix.

The scale operator of index r discretizes (-Laplacian)^r on [0, 1] under
the boundary conditions
    x^(k)(1) = 0 for 0 <= k < r,      x^(k)(0) = 0 for r <= k < 2r,
with the right boundary located one grid step past the last node
(t_n = 1).  Boundary rows are obtained by eliminating ghost nodes:

* left ghosts x_{-1}..x_{-r} solve the r central-difference equations
  x^(k)(0) = 0, k = r..2r-1;
* right ghosts use x_n = 0 and second-order reflections through t = 1,
  x_{n+m} = x_{n-m} for odd m and x_{n+m} = -x_{n-m} for even m.

For r = 1, 2, 3 this reproduces the classical stencils for these boundary
conditions entry for entry (integer entries times dt^(-2r)); ghost
elimination is done in exact rational arithmetic so no rounding enters
the assembly.  For r > 3 the same construction applies but the boundary
closures have not been cross-checked against published stencils, so the
operator is flagged experimental.

The penalty matrix encoding the scale norm of smoothness order p is
(B^T B)^(p/2r); its quadratic form discretizes the squared L2 norm of the
p-th derivative under the boundary conditions above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from .operators import ConstantKernel, Grid, ForwardOperator, build_abel_matrix, grid_norm


@dataclass(frozen=True)
class ScaleOperator:
    r: int
    grid: Grid
    matrix: np.ndarray = field(repr=False)
    experimental: bool = False


@dataclass(frozen=True)
class PenaltyMatrix:
    r: int
    p: float
    matrix: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def sqrt_matrix(self) -> np.ndarray:
        """Symmetric square root, used by the stacked solver path."""
        return sym_fractional_power(self.matrix, 0.5)


def _difference_coeffs(k: int) -> dict[int, Fraction]:
    """Central stencil for the k-th derivative at offset 0, unit spacing.

    Even k: the plain k-th difference centered on 0.  Odd k: the average
    of the two half-shifted k-th differences (the standard second-order
    centered stencil, e.g. [-1/2, 0, 1/2] for k = 1).
    """
    base = {j: Fraction((-1) ** (k - j)) * math.comb(k, j) for j in range(k + 1)}
    if k % 2 == 0:
        return {j - k // 2: c for j, c in base.items()}
    half = Fraction(1, 2)
    out: dict[int, Fraction] = {}
    for shift in ((k + 1) // 2, (k - 1) // 2):
        for j, c in base.items():
            out[j - shift] = out.get(j - shift, Fraction(0)) + half * c
    return out


def _solve_fraction_system(a: list[list[Fraction]], b: list[list[Fraction]]):
    """Gaussian elimination over Fractions; returns a^-1 b (b has many columns)."""
    m = len(a)
    aug = [row_a[:] + row_b[:] for row_a, row_b in zip(a, b)]
    width = len(aug[0])
    for col in range(m):
        pivot = next((r for r in range(col, m) if aug[r][col] != 0), None)
        if pivot is None:
            raise np.linalg.LinAlgError("singular ghost-elimination system")
        aug[col], aug[pivot] = aug[pivot], aug[col]
        inv = Fraction(1) / aug[col][col]
        aug[col] = [v * inv for v in aug[col]]
        for r in range(m):
            if r != col and aug[r][col] != 0:
                f = aug[r][col]
                aug[r] = [v - f * p for v, p in zip(aug[r], aug[col])]
    return [row[m:width] for row in aug]


def _left_ghosts(r: int) -> list[list[Fraction]]:
    """Coefficients expressing x_{-1}..x_{-r} through x_0..x_r.

    Row g-1 gives x_{-g} = sum_j coeffs[g-1][j] * x_j.
    """
    ghost_cols = list(range(-1, -r - 1, -1))
    interior_cols = list(range(0, r + 1))
    a = [[Fraction(0)] * r for _ in range(r)]
    b = [[Fraction(0)] * (r + 1) for _ in range(r)]
    for row, k in enumerate(range(r, 2 * r)):
        for off, c in _difference_coeffs(k).items():
            if off < 0:
                a[row][ghost_cols.index(off)] = c
            else:
                b[row][interior_cols.index(off)] = -c
    return _solve_fraction_system(a, b)


def _base_stencil(r: int) -> list[Fraction]:
    """Coefficients of the 2r-th central difference of (-Laplacian)^r."""
    stencil = [Fraction(-1), Fraction(2), Fraction(-1)]
    out = stencil
    for _ in range(r - 1):
        width = len(out) + 2
        nxt = [Fraction(0)] * width
        for i, u in enumerate(out):
            for j, v in enumerate(stencil):
                nxt[i + j] += u * v
        out = nxt
    return out


def build_scale_operator(r: int, grid: Grid) -> ScaleOperator:
    """Assemble the dt^(-2r)-scaled finite-difference matrix of index r."""
    if r < 1:
        raise ValueError(f"scale index must be >= 1, got r={r}")
    n = grid.n
    if n < 2 * r + 2:
        raise ValueError(f"n={n} too small for scale index r={r} (need n >= {2 * r + 2})")

    stencil = _base_stencil(r)
    left = _left_ghosts(r)
    rows = [[Fraction(0)] * n for _ in range(n)]
    for i in range(n):
        for off_idx, c in enumerate(stencil):
            if c == 0:
                continue
            j = i + off_idx - r
            if 0 <= j < n:
                rows[i][j] += c
            elif j < 0:
                for col, lc in enumerate(left[-j - 1]):
                    rows[i][col] += c * lc
            else:
                m = j - n
                if m == 0:
                    continue  # x(1) = 0
                sign = 1 if m % 2 == 1 else -1
                rows[i][n - m] += sign * c

    scale = float(n) ** (2 * r)
    matrix = np.array([[float(v) for v in row] for row in rows]) * scale
    return ScaleOperator(r=r, grid=grid, matrix=matrix, experimental=r > 3)


def sym_fractional_power(matrix: np.ndarray, s: float, sym_tol: float = 1e-8) -> np.ndarray:
    """M^s for symmetric positive-semidefinite M, via eigendecomposition.

    Negative eigenvalues (roundoff leakage, expected below 1e-12 times the
    spectral radius) are clamped to zero before the power is taken.
    """
    matrix = np.asarray(matrix, dtype=float)
    if s < 0:
        raise ValueError(f"power must be >= 0, got s={s}")
    scale = np.linalg.norm(matrix)
    if scale > 0 and np.linalg.norm(matrix - matrix.T) > sym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    if s == 0:
        return np.eye(matrix.shape[0])
    eigvals, eigvecs = np.linalg.eigh(0.5 * (matrix + matrix.T))
    lam_max = float(eigvals[-1])
    eigvals = np.where(eigvals < 1e-12 * max(lam_max, 0.0), 0.0, eigvals)
    powered = (eigvecs * eigvals**s) @ eigvecs.T
    return 0.5 * (powered + powered.T)


def build_penalty(r: int, p: float, grid: Grid) -> PenaltyMatrix:
    """Penalty matrix (B^T B)^(p/2r) for smoothness order p >= 0."""
    if p < 0:
        raise ValueError(f"penalty order must be >= 0, got p={p}")
    if p == 0:
        return PenaltyMatrix(r=r, p=0.0, matrix=np.eye(grid.n))
    b = build_scale_operator(r, grid).matrix
    gram = b.T @ b
    matrix = sym_fractional_power(gram, p / (2.0 * r))
    return PenaltyMatrix(r=r, p=float(p), matrix=matrix)


def factorization_residual(r: int, grid: Grid, x: np.ndarray) -> float:
    """Relative defect of the discrete identity S* S B x = (r-1)!^2 x.

    ``x`` should sample a smooth function satisfying the boundary
    conditions of index r; the defect then decays like O(dt).  Returns 0
    for x = 0 by convention.

    S* is the adjoint under the trapezoid quadrature weights: the plain
    transpose of the forward matrix carries the halved endpoint weight of
    node 0 into row 0 of the adjoint, which misstates the L2 adjoint at
    that node by a factor 2 and would stall the defect at O(sqrt(dt)).
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (grid.n,):
        raise ValueError(f"expected vector of length {grid.n}, got shape {x.shape}")
    norm_x = grid_norm(x, grid.dt)
    if norm_x == 0.0:
        return 0.0
    s_mat = build_abel_matrix(r, grid, ConstantKernel()).matrix
    b_mat = build_scale_operator(r, grid).matrix
    recon = s_mat.T @ (s_mat @ (b_mat @ x)) / math.factorial(r - 1) ** 2
    recon[0] *= 2.0
    return grid_norm(recon - x, grid.dt) / norm_x
