"""
Piecewise-linear finite elements on :py:class:`~bohmgrav.mesh.Mesh` and their radial counterpart
on :py:class:`~bohmgrav.mesh.RadialGrid`.

Every nonlinear integrand is evaluated with the lumped (vertex) quadrature, so that discrete
normalization and the discrete Poisson load use the same weights.

Both kinds of grid are reduced to a :py:class:`Discretization`: lumped vertex weights, a stiffness
matrix, per-cell gradient operators, and the share of each cell that every vertex receives under
lumped quadrature. Solvers that only talk to a :py:class:`Discretization` work unchanged on 2D
meshes and radial grids.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConfigError, NumericalError
from .mesh import FloatArray, IndexArray, Mesh, RadialGrid

SparseMatrix = sp.csr_matrix
Grid = Union[Mesh, RadialGrid]

DEFAULT_LINEAR_TOL = 1e-10
DEGENERATE_AREA = 1e-14

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Discretization:
    """
    The discrete operators of a grid.

    :param grid: The mesh or radial grid these operators belong to.
    :param weights: Lumped quadrature weight of each node; they sum to :py:attr:`measure`.
    :param stiffness: The symmetric stiffness matrix of ∫∇u·∇v.
    :param gradients: One matrix per space dimension mapping nodal values to the (constant)
        gradient component on each cell.
    :param cell_measure: Area (2D) or 2πr-weighted length (radial) of each cell.
    :param shares: Matrix of shape (nodes, cells) whose entry (a, c) is the part of cell c's
        measure that node a receives under lumped quadrature.
    :param dirichlet_nodes: Nodes on Γ, where the potential vanishes.
    """

    grid: Grid
    weights: FloatArray
    stiffness: SparseMatrix
    gradients: tuple[SparseMatrix, ...]
    cell_measure: FloatArray
    shares: SparseMatrix
    dirichlet_nodes: IndexArray

    @property
    def num_nodes(self) -> int:
        return int(self.weights.shape[0])

    @property
    def measure(self) -> float:
        """The discrete measure |Ω_h|."""
        return float(self.weights.sum())

    def solve(
        self,
        matrix: SparseMatrix,
        rhs: FloatArray,
        *,
        symmetric: bool,
        tol: float = DEFAULT_LINEAR_TOL,
    ) -> FloatArray:
        """
        Solve a system assembled on this grid.

        Radial systems are tridiagonal and go to :py:func:`solve_tridiagonal`; 2D systems go to
        :py:func:`solve_linear`.
        """
        if isinstance(self.grid, RadialGrid):
            return solve_tridiagonal(matrix, rhs, tol=tol)
        return solve_linear(matrix, rhs, symmetric=symmetric, tol=tol)

    def integrate(self, values: FloatArray) -> float:
        return float(self.weights @ values)

    def cell_gradients(self, u: FloatArray) -> list[FloatArray]:
        return [d @ u for d in self.gradients]

    def gradsq_load(self, u: FloatArray) -> FloatArray:
        """Load vector of ∫|∇u|²φ_a with the lumped test-function quadrature."""
        squared = sum(g * g for g in self.cell_gradients(u))
        return np.asarray(self.shares @ squared, dtype=np.float64)

    def gradient_coupling(self, u: FloatArray) -> SparseMatrix:
        """
        The matrix B(u) with (B(u)δ)_a = ∫(∇u·∇δ)φ_a under lumped test-function quadrature.

        This is half the derivative of :py:meth:`gradsq_load` at ``u``.
        """
        coupling = None
        for d, g in zip(self.gradients, self.cell_gradients(u)):
            term = self.shares @ sp.diags(g) @ d
            coupling = term if coupling is None else coupling + term
        assert coupling is not None
        return sp.csr_matrix(coupling)


class Norms(NamedTuple):
    l1: float
    l2: float
    linf: float
    h1_semi: float


@functools.lru_cache(maxsize=16)
def discretize(grid: Grid) -> Discretization:
    """
    Build (and cache) the discrete operators of a mesh or radial grid.

    :raises NumericalError: If the mesh has a degenerate triangle.
    """
    if isinstance(grid, RadialGrid):
        return _discretize_radial(grid)
    return _discretize_mesh(grid)


def element_geometry(mesh: Mesh) -> tuple[FloatArray, FloatArray, FloatArray]:
    """
    Areas and P1 basis gradients of every triangle.

    :returns: ``(areas, gx, gy)`` where ``gx[t, k]`` and ``gy[t, k]`` are the gradient components
        of the barycentric coordinate of vertex ``k`` of triangle ``t``.
    :raises NumericalError: If a triangle has area below ``DEGENERATE_AREA``.
    """
    areas = mesh.signed_areas()
    if areas.size and areas.min() < DEGENERATE_AREA:
        bad = int(np.argmin(areas))
        raise NumericalError(f"degenerate triangle {bad} with area {areas[bad]:.3e}")
    corners = mesh.nodes[mesh.triangles]
    x, y = corners[:, :, 0], corners[:, :, 1]
    twice = (2.0 * areas)[:, None]
    gx = (np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)) / twice
    gy = (np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)) / twice
    return areas, gx, gy


def assemble_stiffness(mesh: Mesh) -> SparseMatrix:
    """
    Assemble the P1 stiffness matrix K_ab = Σ_T area(T)·∇φ_a·∇φ_b.

    :raises NumericalError: If the mesh has a degenerate triangle.
    """
    areas, gx, gy = element_geometry(mesh)
    local = areas[:, None, None] * (
        gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :]
    )
    return _assemble(mesh, local)


def assemble_mass(mesh: Mesh, *, lumped: bool) -> SparseMatrix:
    """
    Assemble the P1 mass matrix.

    :param lumped: If true, the diagonal matrix of vertex weights Σ_{T∋a} area(T)/3; otherwise the
        consistent matrix with local entries area/12·(1 + δ_ij).
    """
    areas, _, _ = element_geometry(mesh)
    if lumped:
        weights = np.bincount(
            mesh.triangles.ravel(),
            weights=np.repeat(areas / 3.0, 3),
            minlength=mesh.num_nodes,
        )
        return sp.csr_matrix(sp.diags(weights))
    pattern = np.ones((3, 3)) + np.eye(3)
    local = (areas / 12.0)[:, None, None] * pattern[None, :, :]
    return _assemble(mesh, local)


def assemble_gradsq_load(mesh: Mesh, u: FloatArray) -> FloatArray:
    """
    Load vector of ∫|∇u|²φ_a: entry a is Σ_{T∋a} |∇u|²_T·area(T)/3.

    :raises NumericalError: If ``u`` has non-finite values.
    """
    check_field(mesh, u, "u")
    return discretize(mesh).gradsq_load(u)


def apply_dirichlet(
    matrix: SparseMatrix,
    rhs: FloatArray,
    nodes: IndexArray,
    value: float = 0.0,
) -> tuple[SparseMatrix, FloatArray]:
    """
    Impose u = value on ``nodes`` by symmetric elimination.

    Constrained rows and columns are zeroed with a unit diagonal, and the right-hand side of the
    free rows is lifted by the known values, so the system for the free unknowns is unchanged.

    :returns: The modified matrix and right-hand side; the inputs are not modified.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return matrix, rhs.copy()

    fixed = np.zeros(matrix.shape[0], dtype=bool)
    fixed[nodes] = True
    lift = np.where(fixed, value, 0.0)
    reduced_rhs = rhs - matrix @ lift
    reduced_rhs[fixed] = value

    keep = sp.diags((~fixed).astype(np.float64))
    reduced = keep @ matrix @ keep + sp.diags(fixed.astype(np.float64))
    reduced = sp.csr_matrix(reduced)
    reduced.eliminate_zeros()
    reduced.sort_indices()
    return reduced, reduced_rhs


def solve_linear(
    matrix: SparseMatrix,
    rhs: FloatArray,
    *,
    symmetric: bool,
    tol: float = DEFAULT_LINEAR_TOL,
    direct: bool = False,
    backward: bool = False,
    maxiter: int | None = None,
) -> FloatArray:
    """
    Solve a sparse linear system to a relative residual ‖Ax − b‖₂/‖b‖₂ ≤ ``tol``.

    Symmetric systems use conjugate gradients with a diagonal (Jacobi) preconditioner, falling
    back to sparse LU if CG stops short. Nonsymmetric systems, and any system when ``direct`` is
    set, use sparse LU.

    :param backward: Accept the solution by its componentwise backward error
        (:py:func:`backward_error`) instead of the relative residual; implies ``direct``. Badly
        scaled systems, whose relative residual sits at cond(A)·ε after an exact LU, need this.

    :raises ConfigError: If the matrix is not square or ``tol`` is not positive.
    :raises NumericalError: If the returned solution misses the tolerance; carries the residual.
    """
    rows, cols = matrix.shape
    if rows != cols:
        raise ConfigError(f"linear system must be square, got {rows}x{cols}")
    if not tol > 0.0:
        raise ConfigError(f"linear tolerance must be positive, got {tol}")

    b_norm = float(np.linalg.norm(rhs))
    if b_norm == 0.0:
        return np.zeros(rows)
    if not math.isfinite(b_norm):
        raise NumericalError("right-hand side has non-finite entries")

    x: FloatArray | None = None
    if symmetric and not (direct or backward):
        diagonal = matrix.diagonal()
        if np.all(diagonal > 0.0):
            preconditioner = sp.diags(1.0 / diagonal)
            x, info = spla.cg(
                matrix,
                rhs,
                rtol=tol,
                atol=0.0,
                maxiter=maxiter if maxiter is not None else 10 * rows,
                M=preconditioner,
            )
            if info != 0 or _relative_residual(matrix, x, rhs, b_norm) > tol:
                logger.debug("CG stopped short (info=%d); using sparse LU", info)
                x = None

    if x is None:
        x = np.asarray(spla.spsolve(sp.csc_matrix(matrix), rhs), dtype=np.float64)

    if backward:
        return _accept_backward(matrix, x, rhs, tol)
    residual = _relative_residual(matrix, x, rhs, b_norm)
    if not residual <= tol:
        raise NumericalError(
            f"linear solve reached relative residual {residual:.3e} > {tol:.1e}",
            residual=residual,
        )
    return x


def solve_tridiagonal(
    matrix: SparseMatrix, rhs: FloatArray, *, tol: float = DEFAULT_LINEAR_TOL
) -> FloatArray:
    """
    Solve a tridiagonal system by banded LU after symmetric diagonal scaling.

    Radial operators carry the 2πr cell measures, so their rows span many orders of magnitude
    between the axis and the rim; at 10⁵ nodes even an exact LU leaves a relative residual far
    above 10⁻¹⁰. The solution is therefore accepted by its componentwise backward error.

    :raises ConfigError: If the matrix is not square and tridiagonal, or ``tol`` is not positive.
    :raises NumericalError: If the matrix is singular or the backward error exceeds ``tol``.
    """
    rows, cols = matrix.shape
    if rows != cols:
        raise ConfigError(f"linear system must be square, got {rows}x{cols}")
    if not tol > 0.0:
        raise ConfigError(f"linear tolerance must be positive, got {tol}")
    if sp.tril(matrix, -2).count_nonzero() or sp.triu(matrix, 2).count_nonzero():
        raise ConfigError("matrix is not tridiagonal")
    if not np.all(np.isfinite(rhs)):
        raise NumericalError("right-hand side has non-finite entries")
    if not np.any(rhs):
        return np.zeros(rows)

    diagonal = matrix.diagonal()
    if not np.all(np.isfinite(diagonal)) or np.any(diagonal == 0.0):
        raise NumericalError("tridiagonal system has a zero or non-finite diagonal entry")
    scale = 1.0 / np.sqrt(np.abs(diagonal))
    banded = np.zeros((3, rows))
    banded[0, 1:] = matrix.diagonal(1) * scale[:-1] * scale[1:]
    banded[1] = diagonal * scale * scale
    banded[2, :-1] = matrix.diagonal(-1) * scale[1:] * scale[:-1]
    try:
        y = sla.solve_banded((1, 1), banded, rhs * scale, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalError(f"tridiagonal solve failed: {exc}") from exc
    return _accept_backward(matrix, np.asarray(y * scale, dtype=np.float64), rhs, tol)


def backward_error(matrix: SparseMatrix, x: FloatArray, rhs: FloatArray) -> float:
    """
    The componentwise backward error max_i |Ax − b|_i / (|A||x| + |b|)_i.

    ``x`` solves a system whose entries differ from ``A`` and ``b`` by at most this relative
    amount. Rows with a zero denominator count only if their residual is nonzero.
    """
    residual = np.abs(matrix @ x - rhs)
    scale = abs(matrix) @ np.abs(x) + np.abs(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(scale > 0.0, residual / scale, np.where(residual == 0.0, 0.0, np.inf))
    return float(np.max(ratios)) if ratios.size else 0.0


def integrate(grid: Grid, f: FloatArray) -> float:
    """Integrate a nodal field with the lumped vertex quadrature (exact for P1 fields)."""
    check_field(grid, f, "f")
    return discretize(grid).integrate(f)


def norms(grid: Grid, f: FloatArray) -> Norms:
    """
    L¹, L², L∞ norms and the H¹ seminorm of a nodal field.

    L¹ and L² use the lumped quadrature of the nodal values |f| and f².
    """
    check_field(grid, f, "f")
    disc = discretize(grid)
    energy = float(f @ (disc.stiffness @ f))
    return Norms(
        l1=disc.integrate(np.abs(f)),
        l2=math.sqrt(disc.integrate(f * f)),
        linf=float(np.max(np.abs(f))) if f.size else 0.0,
        h1_semi=math.sqrt(max(energy, 0.0)),
    )


def check_field(grid: Grid, values: FloatArray, name: str) -> None:
    """
    Check that ``values`` holds one finite value per node of ``grid``.

    :raises ConfigError: On a size mismatch.
    :raises NumericalError: On non-finite values.
    """
    expected = grid.num_nodes
    if values.shape != (expected,):
        raise ConfigError(
            f"field {name} has shape {values.shape}, expected ({expected},)"
        )
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"field {name} has non-finite values")


def _relative_residual(
    matrix: SparseMatrix, x: FloatArray, rhs: FloatArray, b_norm: float
) -> float:
    return float(np.linalg.norm(matrix @ x - rhs)) / b_norm


def _accept_backward(
    matrix: SparseMatrix, x: FloatArray, rhs: FloatArray, tol: float
) -> FloatArray:
    error = backward_error(matrix, x, rhs)
    if not error <= tol:
        raise NumericalError(
            f"linear solve reached backward error {error:.3e} > {tol:.1e}", residual=error
        )
    return x


def _assemble(mesh: Mesh, local: FloatArray) -> SparseMatrix:
    tris = mesh.triangles
    rows = np.broadcast_to(tris[:, :, None], local.shape)
    cols = np.broadcast_to(tris[:, None, :], local.shape)
    matrix = sp.csr_matrix(
        (local.ravel(), (rows.ravel(), cols.ravel())),
        shape=(mesh.num_nodes, mesh.num_nodes),
    )
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def _discretize_mesh(mesh: Mesh) -> Discretization:
    areas, gx, gy = element_geometry(mesh)
    n_cells = mesh.num_triangles
    cell_rows = np.repeat(np.arange(n_cells), 3)
    vertices = mesh.triangles.ravel()
    shape = (n_cells, mesh.num_nodes)
    grad_x = sp.csr_matrix((gx.ravel(), (cell_rows, vertices)), shape=shape)
    grad_y = sp.csr_matrix((gy.ravel(), (cell_rows, vertices)), shape=shape)
    shares = sp.csr_matrix(
        (np.repeat(areas / 3.0, 3), (vertices, cell_rows)),
        shape=(mesh.num_nodes, n_cells),
    )
    weights = np.asarray(shares.sum(axis=1)).ravel()
    return Discretization(
        grid=mesh,
        weights=weights,
        stiffness=assemble_stiffness(mesh),
        gradients=(grad_x, grad_y),
        cell_measure=areas,
        shares=shares,
        dirichlet_nodes=mesh.boundary_nodes,
    )


def _discretize_radial(grid: RadialGrid) -> Discretization:
    # Cell f is the interval [r_f, r_{f+1}]; its measure is the 2πr-moment of the interval.
    r = grid.r
    h = grid.spacing
    if h.min() <= 0.0:
        raise NumericalError("radial grid nodes must be strictly increasing")
    mid = grid.faces
    n_nodes = grid.num_nodes
    n_cells = n_nodes - 1
    cells = np.arange(n_cells)

    gradient = sp.csr_matrix(
        (
            np.concatenate([-1.0 / h, 1.0 / h]),
            (np.concatenate([cells, cells]), np.concatenate([cells, cells + 1])),
        ),
        shape=(n_cells, n_nodes),
    )
    inner = math.pi * (mid**2 - r[:-1] ** 2)
    outer = math.pi * (r[1:] ** 2 - mid**2)
    shares = sp.csr_matrix(
        (
            np.concatenate([inner, outer]),
            (np.concatenate([cells, cells + 1]), np.concatenate([cells, cells])),
        ),
        shape=(n_nodes, n_cells),
    )
    measure = 2.0 * math.pi * mid * h
    stiffness = sp.csr_matrix(gradient.T @ sp.diags(measure) @ gradient)
    stiffness.sort_indices()
    return Discretization(
        grid=grid,
        weights=np.asarray(shares.sum(axis=1)).ravel(),
        stiffness=stiffness,
        gradients=(gradient,),
        cell_measure=measure,
        shares=shares,
        dirichlet_nodes=np.array([n_nodes - 1], dtype=np.int64),
    )
