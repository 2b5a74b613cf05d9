"""
Triangulations of the unit disk and the unit square, and radial grids of the unit interval.

Meshes are immutable values. Refinement returns a new :py:class:`Mesh`; nothing is modified in
place.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum

import numpy as np
import numpy.typing as npt

from .errors import ConfigError, NumericalError

FloatArray = npt.NDArray[np.float64]
IndexArray = npt.NDArray[np.int64]

MAX_DISK_LEVEL = 10
BOUNDARY_RADIUS_TOL = 1e-12

logger = logging.getLogger(__name__)


class DomainKind(str, Enum):
    """The domain Ω being discretized."""

    DISK = "disk"
    SQUARE = "square"


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    A conforming triangulation with tagged boundary nodes.

    :param nodes: Node coordinates, shape ``(N, 2)``.
    :param triangles: Node indices of each triangle in counterclockwise order, shape ``(T, 3)``.
    :param boundary_nodes: Sorted indices of the nodes on the boundary Γ.
    :param domain_kind: Which domain the mesh approximates.
    """

    nodes: FloatArray
    triangles: IndexArray
    boundary_nodes: IndexArray
    domain_kind: DomainKind

    def __repr__(self) -> str:
        return (
            f"Mesh(domain={self.domain_kind.value}, nodes={self.num_nodes}, "
            f"triangles={self.num_triangles})"
        )

    @property
    def num_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    def signed_areas(self) -> FloatArray:
        """Signed area of each triangle; positive for counterclockwise orientation."""
        p0, p1, p2 = (self.nodes[self.triangles[:, k]] for k in range(3))
        d1 = p1 - p0
        d2 = p2 - p0
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def total_area(self) -> float:
        return float(self.signed_areas().sum())

    def edges(self) -> IndexArray:
        """The unique edges as sorted node pairs, shape ``(E, 2)``."""
        return _edge_table(self.triangles)[0]

    def diameters(self) -> FloatArray:
        """Longest edge length of each triangle."""
        lengths = [
            np.linalg.norm(
                self.nodes[self.triangles[:, (k + 1) % 3]]
                - self.nodes[self.triangles[:, k]],
                axis=1,
            )
            for k in range(3)
        ]
        return np.max(np.stack(lengths, axis=1), axis=1)

    def mesh_size(self) -> float:
        return float(self.diameters().max())

    def max_angle(self) -> float:
        """The largest interior angle over all triangles, in radians."""
        angles = []
        for k in range(3):
            p = self.nodes[self.triangles[:, k]]
            a = self.nodes[self.triangles[:, (k + 1) % 3]] - p
            b = self.nodes[self.triangles[:, (k + 2) % 3]] - p
            cos = np.einsum("ij,ij->i", a, b) / (
                np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
            )
            angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
        return float(np.max(angles))

    def is_nonobtuse(self) -> bool:
        return self.max_angle() <= 0.5 * math.pi + 1e-12

    def validate(self) -> None:
        """
        Check the mesh invariants.

        :raises NumericalError: If a triangle has nonpositive area, a boundary node is off Γ,
            nodes are duplicated, an edge is shared by more than two triangles, the boundary tags
            disagree with the boundary edges, or the Euler relation fails.
        """
        areas = self.signed_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise NumericalError(
                f"triangle {bad} has nonpositive area {areas[bad]:.3e}"
            )

        boundary = self.nodes[self.boundary_nodes]
        if self.domain_kind is DomainKind.DISK:
            off = np.abs(np.einsum("ij,ij->i", boundary, boundary) - 1.0)
            if off.size and off.max() >= BOUNDARY_RADIUS_TOL:
                raise NumericalError(
                    f"boundary node off the unit circle by {off.max():.3e}"
                )
        else:
            dist = np.minimum(
                np.minimum(boundary[:, 0], 1.0 - boundary[:, 0]),
                np.minimum(boundary[:, 1], 1.0 - boundary[:, 1]),
            )
            if dist.size and dist.max() != 0.0:
                raise NumericalError("boundary node off the unit square boundary")

        if np.unique(self.nodes, axis=0).shape[0] != self.num_nodes:
            raise NumericalError("mesh has duplicate nodes")

        edges, _, counts = _edge_table(self.triangles)
        if np.any(counts > 2):
            raise NumericalError("edge shared by more than two triangles")
        tagged = np.unique(edges[counts == 1])
        if not np.array_equal(tagged, self.boundary_nodes):
            raise NumericalError("boundary tags disagree with the boundary edges")

        euler = self.num_nodes - edges.shape[0] + self.num_triangles
        if euler != 1:
            raise NumericalError(f"Euler characteristic is {euler}, expected 1")


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """
    Nodes 0 = r₀ < r₁ < … < r_N = 1 of a radially symmetric discretization of the unit disk.

    Each node owns the control volume between the neighbouring face midpoints (the first from
    r = 0, the last up to r = 1).

    :param r: Node radii, strictly increasing from 0 to 1.
    :param grading: The clustering parameter the grid was built with (0 for uniform).
    """

    r: FloatArray
    grading: float = 0.0

    def __repr__(self) -> str:
        return f"RadialGrid(points={self.num_nodes}, grading={self.grading})"

    @property
    def num_nodes(self) -> int:
        return int(self.r.shape[0])

    @property
    def domain_kind(self) -> DomainKind:
        return DomainKind.DISK

    @property
    def faces(self) -> FloatArray:
        """Midpoints between neighbouring nodes, shape ``(N,)``."""
        return 0.5 * (self.r[1:] + self.r[:-1])

    @property
    def spacing(self) -> FloatArray:
        return np.diff(self.r)

    def mesh_size(self) -> float:
        return float(self.spacing.max())


def build_disk_mesh(level: int) -> Mesh:
    """
    Triangulate the unit disk.

    Level 0 is a fan of six triangles around the origin with six boundary nodes on the unit
    circle; every further level is one :py:func:`refine_uniform` step.

    :param level: Number of uniform refinements, between 0 and ``MAX_DISK_LEVEL``.
    :raises ConfigError: If the level is out of range.
    """
    if not 0 <= level <= MAX_DISK_LEVEL:
        raise ConfigError(
            f"disk mesh level must be between 0 and {MAX_DISK_LEVEL}, got {level}"
        )

    angles = np.arange(6) * (math.pi / 3.0)
    nodes = np.vstack([[0.0, 0.0], np.column_stack([np.cos(angles), np.sin(angles)])])
    ring = np.arange(1, 7, dtype=np.int64)
    triangles = np.column_stack(
        [np.zeros(6, dtype=np.int64), ring, np.roll(ring, -1)]
    )
    mesh = Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_nodes=ring.copy(),
        domain_kind=DomainKind.DISK,
    )
    for _ in range(level):
        mesh = refine_uniform(mesh)
    logger.debug("built disk mesh level %d: %r", level, mesh)
    return mesh


def build_square_mesh(n: int) -> Mesh:
    """
    Triangulate the unit square with a uniform ``n × n`` grid, each cell split along its
    diagonal.

    :param n: Number of cells per side.
    :raises ConfigError: If ``n < 1``.
    """
    if n < 1:
        raise ConfigError(f"square mesh needs at least one cell per side, got {n}")

    ticks = np.arange(n + 1, dtype=np.float64) / n
    x, y = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([x.ravel(), y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    v00 = (i + (n + 1) * j).ravel().astype(np.int64)
    v10 = v00 + 1
    v01 = v00 + n + 1
    v11 = v01 + 1
    triangles = np.stack(
        [np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])], axis=1
    ).reshape(-1, 3)

    index = np.arange(nodes.shape[0])
    on_boundary = (
        (index % (n + 1) == 0)
        | (index % (n + 1) == n)
        | (index < n + 1)
        | (index >= n * (n + 1))
    )
    return Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_nodes=index[on_boundary].astype(np.int64),
        domain_kind=DomainKind.SQUARE,
    )


def refine_uniform(mesh: Mesh) -> Mesh:
    """
    Split every triangle into four through its edge midpoints.

    Midpoints are created once per edge and numbered after the existing nodes in edge order.
    On the disk, midpoints of boundary edges are projected radially onto the unit circle.
    """
    edges, tri_edges, counts = _edge_table(mesh.triangles)
    midpoints = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
    boundary_edges = np.flatnonzero(counts == 1)
    if mesh.domain_kind is DomainKind.DISK:
        outer = midpoints[boundary_edges]
        midpoints[boundary_edges] = outer / np.linalg.norm(outer, axis=1)[:, None]

    offset = mesh.num_nodes
    a, b, c = mesh.triangles.T
    m01, m12, m20 = (offset + tri_edges).T
    triangles = np.stack(
        [
            np.column_stack([a, m01, m20]),
            np.column_stack([m01, b, m12]),
            np.column_stack([m20, m12, c]),
            np.column_stack([m01, m12, m20]),
        ],
        axis=1,
    ).reshape(-1, 3)

    boundary_nodes = np.union1d(mesh.boundary_nodes, offset + boundary_edges)
    return Mesh(
        nodes=np.vstack([mesh.nodes, midpoints]),
        triangles=triangles.astype(np.int64),
        boundary_nodes=boundary_nodes.astype(np.int64),
        domain_kind=mesh.domain_kind,
    )


def refine_marked(mesh: Mesh, marks: Iterable[int]) -> Mesh:
    """
    Refine the marked triangles by longest-edge bisection.

    Neighbours are bisected recursively along their own longest edges until the bisected edge
    is shared by two triangles that both have it as longest edge, so the result has no hanging
    nodes. Untouched triangles keep their relative order; new triangles follow them.

    :param mesh: The mesh to refine.
    :param marks: Indices of the triangles to refine.
    :raises ConfigError: If a mark is not a triangle index of ``mesh``.
    """
    marked = sorted({int(t) for t in marks})
    for t in marked:
        if not 0 <= t < mesh.num_triangles:
            raise ConfigError(
                f"marked triangle {t} is not in a mesh of {mesh.num_triangles} triangles"
            )
    if not marked:
        return mesh

    bisector = _LongestEdgeBisector(mesh)
    for t in marked:
        bisector.refine(t)
    refined = bisector.to_mesh()
    logger.debug(
        "refined %d marked triangles: %d -> %d triangles",
        len(marked),
        mesh.num_triangles,
        refined.num_triangles,
    )
    return refined


def build_radial_grid(points: int, grading: float = 0.0) -> RadialGrid:
    """
    Build nodes on [0, 1] for radially symmetric problems on the unit disk.

    :param points: Number of nodes, including r = 0 and r = 1.
    :param grading: 0 for a uniform grid. A positive value κ clusters nodes toward r = 0 via
        r = (e^{κt} − 1)/(e^κ − 1) for uniform t.
    :raises ConfigError: If fewer than three points are requested or the grading is negative.
    """
    if points < 3:
        raise ConfigError(f"radial grid needs at least 3 points, got {points}")
    if grading < 0.0 or not math.isfinite(grading):
        raise ConfigError(f"radial grading must be a nonnegative number, got {grading}")

    t = np.linspace(0.0, 1.0, points)
    if grading == 0.0:
        r = t
    else:
        r = np.expm1(grading * t) / math.expm1(grading)
    r[0] = 0.0
    r[-1] = 1.0
    return RadialGrid(r=r, grading=float(grading))


def _edge_table(triangles: IndexArray) -> tuple[IndexArray, IndexArray, IndexArray]:
    # Local edge k of a triangle runs from vertex k to vertex (k + 1) % 3.
    local = triangles[:, [[0, 1], [1, 2], [2, 0]]]
    keys = np.sort(local, axis=2).reshape(-1, 2)
    edges, inverse, counts = np.unique(
        keys, axis=0, return_inverse=True, return_counts=True
    )
    tri_edges = inverse.reshape(-1)[: keys.shape[0]].reshape(-1, 3)
    return edges.astype(np.int64), tri_edges.astype(np.int64), counts.astype(np.int64)


Edge = tuple[int, int]


class _LongestEdgeBisector:
    def __init__(self, mesh: Mesh) -> None:
        self.project = mesh.domain_kind is DomainKind.DISK
        self.domain_kind = mesh.domain_kind
        self.nodes: list[tuple[float, float]] = [
            (float(x), float(y)) for x, y in mesh.nodes
        ]
        self.boundary: set[int] = {int(i) for i in mesh.boundary_nodes}
        self.triangles: dict[int, tuple[int, int, int]] = {
            t: (int(a), int(b), int(c)) for t, (a, b, c) in enumerate(mesh.triangles)
        }
        self.next_id = mesh.num_triangles
        self.edge_triangles: dict[Edge, set[int]] = {}
        for t, verts in self.triangles.items():
            for edge in _triangle_edges(verts):
                self.edge_triangles.setdefault(edge, set()).add(t)

    def refine(self, triangle: int) -> None:
        stack = [triangle]
        while stack:
            current = stack[-1]
            if current not in self.triangles:
                stack.pop()
                continue
            edge = self._longest_edge(current)
            neighbour = self._neighbour(current, edge)
            if neighbour is None or self._longest_edge(neighbour) == edge:
                self._bisect(edge)
                stack.pop()
            else:
                stack.append(neighbour)

    def to_mesh(self) -> Mesh:
        ids = sorted(self.triangles)
        mesh = Mesh(
            nodes=np.array(self.nodes, dtype=np.float64),
            triangles=np.array([self.triangles[t] for t in ids], dtype=np.int64),
            boundary_nodes=np.array(sorted(self.boundary), dtype=np.int64),
            domain_kind=self.domain_kind,
        )
        return mesh

    def _length_key(self, edge: Edge) -> tuple[float, int, int]:
        (x0, y0), (x1, y1) = self.nodes[edge[0]], self.nodes[edge[1]]
        # Ties in length are broken by the node indices so the order is total.
        return ((x1 - x0) ** 2 + (y1 - y0) ** 2, edge[0], edge[1])

    def _longest_edge(self, triangle: int) -> Edge:
        return max(_triangle_edges(self.triangles[triangle]), key=self._length_key)

    def _neighbour(self, triangle: int, edge: Edge) -> int | None:
        others = self.edge_triangles[edge] - {triangle}
        return next(iter(others)) if others else None

    def _bisect(self, edge: Edge) -> None:
        a, b = edge
        owners = sorted(self.edge_triangles[edge])
        (xa, ya), (xb, yb) = self.nodes[a], self.nodes[b]
        mx, my = 0.5 * (xa + xb), 0.5 * (ya + yb)
        on_boundary = len(owners) == 1
        if on_boundary and self.project:
            radius = math.hypot(mx, my)
            mx, my = mx / radius, my / radius
        midpoint = len(self.nodes)
        self.nodes.append((mx, my))
        if on_boundary:
            self.boundary.add(midpoint)

        for t in owners:
            verts = self.triangles.pop(t)
            for e in _triangle_edges(verts):
                self.edge_triangles[e].discard(t)
            p, q, r = _rotate_to_edge(verts, edge)
            for child in ((p, midpoint, r), (midpoint, q, r)):
                self.triangles[self.next_id] = child
                for e in _triangle_edges(child):
                    self.edge_triangles.setdefault(e, set()).add(self.next_id)
                self.next_id += 1
        del self.edge_triangles[edge]


def _triangle_edges(verts: tuple[int, int, int]) -> list[Edge]:
    a, b, c = verts
    return [
        (min(a, b), max(a, b)),
        (min(b, c), max(b, c)),
        (min(c, a), max(c, a)),
    ]


def _rotate_to_edge(
    verts: tuple[int, int, int], edge: Edge
) -> tuple[int, int, int]:
    for k in range(3):
        p, q, r = verts[k], verts[(k + 1) % 3], verts[(k + 2) % 3]
        if {p, q} == set(edge):
            return p, q, r
    raise NumericalError(f"edge {edge} is not an edge of triangle {verts}")
