"""Discretized Abel-type forward operators on a uniform grid.

The forward map is
    y(t) = int_0^t (t - s)^(a-1) k(t, s) x(s) ds,   a > 0,
discretized with the first-order trapezoidal product rule: on each cell
the singular factor (t - s)^(a-1) is integrated exactly and x is replaced
by the average of its endpoint values, with the kernel sampled at the
grid nodes.  Row 0 of the resulting matrix is identically zero (y(0) = 0
for every operator of this family).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._accel import abel_weights

MAX_DENSE_N = 5000


def grid_norm(v: np.ndarray, dt: float) -> float:
    """Discrete L2 norm with dt weighting: sqrt(dt * sum v_i^2).

    All errors and residuals reported by this package use this
    convention so that values are comparable across grid sizes.
    """
    v = np.asarray(v, dtype=float)
    return math.sqrt(dt * float(np.dot(v, v)))


@dataclass(frozen=True)
class Grid:
    """Uniform partition of [0, 1] with nodes t_i = i/n, i = 0..n-1."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 2:
            raise ValueError(f"grid needs an integer node count >= 2, got {self.n!r}")
        if self.n > MAX_DENSE_N:
            raise ValueError(
                f"n={self.n} exceeds the dense-storage cap {MAX_DENSE_N}"
            )

    @property
    def dt(self) -> float:
        return 1.0 / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) / self.n


class Kernel:
    """Base class for kernels k(t, s) defined on 0 <= s <= t <= 1.

    ``evaluate`` must be vectorized over numpy arrays.  Subclasses may
    provide analytic s-derivatives via ``s_derivative``; the diagnostics
    module falls back to finite differences when they return None.
    """

    kernel_id: str = "generic"

    def evaluate(self, t, s):
        raise NotImplementedError

    def s_derivative(self, order: int) -> Callable | None:
        return None

    def node_values(self, grid: Grid) -> np.ndarray:
        """Kernel sampled at node pairs (t_i, t_j) on the lower triangle.

        Row 0 is never used by the forward matrix (its weights vanish) and
        is left at zero, so kernels only need to be finite for t > 0.
        """
        t = grid.nodes
        ti, sj = np.meshgrid(t, t, indexing="ij")
        vals = np.zeros((grid.n, grid.n))
        mask = np.tril(np.ones((grid.n, grid.n), dtype=bool))
        mask[0, :] = False
        vals[mask] = self.evaluate(ti[mask], sj[mask])
        return vals


class ConstantKernel(Kernel):
    kernel_id = "constant"

    def evaluate(self, t, s):
        return np.ones_like(np.asarray(t, dtype=float))

    def s_derivative(self, order):
        def zero(t, s):
            return np.zeros_like(np.asarray(t, dtype=float))

        return zero

    def node_values(self, grid):
        vals = np.ones((grid.n, grid.n))
        vals[0, :] = 0.0
        return vals


class StereologyKernel(Kernel):
    """k(t, s) = sqrt(t) / sqrt(t + s).

    For t > 0 this takes the values 1/sqrt(2) on the diagonal and 1 at
    s = 0 automatically; only (0, 0) is undefined, and that node is never
    touched by the discretization.
    """

    kernel_id = "stereology"

    def evaluate(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return np.sqrt(t) / np.sqrt(t + s)

    def s_derivative(self, order):
        if order == 1:
            return lambda t, s: -0.5 * np.sqrt(t) * (t + s) ** -1.5
        if order == 2:
            return lambda t, s: 0.75 * np.sqrt(t) * (t + s) ** -2.5
        return None


class CallbackKernel(Kernel):
    """Kernel defined by a Python callable, with optional derivatives.

    ``derivatives`` maps derivative order m (>= 1) to a callable
    (t, s) -> d^m k / ds^m.
    """

    kernel_id = "callback"

    def __init__(self, func: Callable, derivatives: dict[int, Callable] | None = None,
                 name: str = "callback"):
        self._func = func
        self._derivatives = dict(derivatives or {})
        self.kernel_id = name

    def evaluate(self, t, s):
        return np.asarray(self._func(np.asarray(t, dtype=float),
                                     np.asarray(s, dtype=float)), dtype=float)

    def s_derivative(self, order):
        return self._derivatives.get(order)


class TabulatedKernel(Kernel):
    """Kernel given by an n x n table of node values k(t_i, t_j).

    Evaluation off the tabulation nodes uses bilinear interpolation with
    clamping at the edges of [0, t_max]^2.
    """

    kernel_id = "tabulated"

    def __init__(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("tabulated kernel needs a square matrix of node values")
        self._values = values
        self._n = values.shape[0]

    def evaluate(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        n = self._n
        ti = np.clip(t * n, 0, n - 1)
        sj = np.clip(s * n, 0, n - 1)
        i0 = np.minimum(ti.astype(int), n - 2)
        j0 = np.minimum(sj.astype(int), n - 2)
        fi = ti - i0
        fj = sj - j0
        v = self._values
        return ((1 - fi) * (1 - fj) * v[i0, j0]
                + fi * (1 - fj) * v[i0 + 1, j0]
                + (1 - fi) * fj * v[i0, j0 + 1]
                + fi * fj * v[i0 + 1, j0 + 1])

    def node_values(self, grid):
        if grid.n == self._n:
            vals = np.tril(self._values)
            vals[0, :] = 0.0
            return vals
        return super().node_values(grid)


KERNELS = {
    "constant": ConstantKernel,
    "stereology": StereologyKernel,
}


@dataclass(frozen=True)
class ForwardOperator:
    """Dense discretization of the forward map, lower triangular, row 0 zero."""

    a: float
    grid: Grid
    kernel_id: str
    matrix: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.grid.n


def build_abel_matrix(a: float, grid: Grid, kernel: Kernel) -> ForwardOperator:
    """Assemble the trapezoidal forward matrix for order a > 0.

    Entries follow the product rule with exact cell integration of the
    weight (t - s)^(a-1), multiplied by the kernel at the grid nodes:
        (dt^a / 2a) * ((i-j+1)^a - (i-j-1)^a) * k(t_i, t_j)   for 0 < j < i,
        (dt^a / 2a) * (i^a - (i-1)^a) * k(t_i, 0)             for j = 0, i != 0,
        (dt^a / 2a) * k(t_i, t_i)                             for j = i != 0,
    and zero elsewhere.
    """
    if not (a > 0):
        raise ValueError(f"operator order must be positive, got a={a}")
    n = grid.n
    w = abel_weights(n, float(a))
    scale = grid.dt**a / (2.0 * a)
    matrix = scale * w
    if not isinstance(kernel, ConstantKernel):
        kvals = kernel.node_values(grid)
        sub = kvals[1:, :]
        tri = np.tril(np.ones((n - 1, n), dtype=bool), k=1)
        if not np.all(np.isfinite(sub[tri])):
            raise ValueError(
                f"kernel '{kernel.kernel_id}' returned non-finite values at grid nodes"
            )
        matrix = matrix * kvals
        matrix[0, :] = 0.0
    if not np.all(np.isfinite(matrix)):
        raise ValueError("forward matrix contains non-finite entries")
    return ForwardOperator(a=float(a), grid=grid, kernel_id=kernel.kernel_id,
                           matrix=matrix)


def apply_forward(op: ForwardOperator, x: np.ndarray) -> np.ndarray:
    """y = T x.  Always has y[0] = 0."""
    x = np.asarray(x, dtype=float)
    if x.shape != (op.n,):
        raise ValueError(f"expected vector of length {op.n}, got shape {x.shape}")
    return op.matrix @ x


@dataclass(frozen=True)
class ConvergenceEstimate:
    """Result of a grid-refinement study of the forward map."""

    errors: tuple[float, ...]
    orders: tuple[float, ...]
    order: float | None
    exact: bool


def convergence_order(
    builder: Callable[[Grid], ForwardOperator],
    x_func: Callable[[np.ndarray], np.ndarray],
    n_list: Sequence[int],
    reference: Callable[[np.ndarray], np.ndarray] | None = None,
    oversample: int = 10,
) -> ConvergenceEstimate:
    """Estimate the convergence order of the forward discretization.

    Errors on each grid are measured against ``reference`` (an analytic
    y(t)) when given, otherwise against the same scheme on a grid
    ``oversample`` times finer than the largest requested n.  Returns the
    mean log2 ratio of successive errors; when every error is at rounding
    level the scheme is reported exact instead.
    """
    n_list = sorted(int(n) for n in n_list)
    if len(n_list) < 3:
        raise ValueError("need at least 3 grid sizes for an order estimate")

    if reference is None:
        fine = Grid(oversample * n_list[-1])
        y_fine = apply_forward(builder(fine), x_func(fine.nodes))

        def reference_on(grid: Grid) -> np.ndarray:
            stride = fine.n // grid.n
            if stride * grid.n != fine.n:
                raise ValueError("grid sizes must divide the reference grid size")
            return y_fine[::stride]
    else:
        def reference_on(grid: Grid) -> np.ndarray:
            return reference(grid.nodes)

    errors = []
    scale = 0.0
    for n in n_list:
        grid = Grid(n)
        y = apply_forward(builder(grid), x_func(grid.nodes))
        y_ref = reference_on(grid)
        errors.append(grid_norm(y - y_ref, grid.dt))
        scale = max(scale, grid_norm(y_ref, grid.dt))

    if all(e <= 1e-13 * max(scale, 1.0) for e in errors):
        return ConvergenceEstimate(tuple(errors), (), None, exact=True)

    orders = []
    for (n0, e0), (n1, e1) in zip(zip(n_list, errors), zip(n_list[1:], errors[1:])):
        if e1 == 0.0:
            continue
        orders.append(math.log(e0 / e1) / math.log(n1 / n0))
    order = sum(orders) / len(orders) if orders else None
    return ConvergenceEstimate(tuple(errors), tuple(orders), order, exact=False)
