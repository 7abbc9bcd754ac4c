"""P1 triangular finite elements on structured state-grid meshes.

Meshes are built directly on the MDP's state centers: the full grid split
along SW-NE cell diagonals (k=1), or the even-parity checkerboard subset
triangulated by the rotated lattice it induces (k=2, half the nodes). The
drift-diffusion-reaction weak form is assembled with exact P1 mass and
stiffness integrals and centroid quadrature for advection and source terms,
the goal value is pinned to zero by symmetric elimination, and the solved
nodal coefficients define a value function that is continuous over the whole
mesh cover and evaluable (with recovered first and second derivatives)
anywhere inside it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, MeshError, NumericalError
from .flowfield import Point2
from .mdp import StateSpace
from .moments import PdeCoefficients

_BARY_TOL = 1e-9  # dimensionless barycentric containment tolerance
_NODE_TOL_KM = 1e-9
_MIN_AREA_KM2 = 1e-12


def _cross_z(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """z-component of the cross product of planar vectors (broadcasts)."""
    return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]


@dataclass(eq=False)
class Mesh:
    """Conforming triangulation whose vertices are grid states.

    Triangles are counter-clockwise node-id triples; ``node_state`` maps each
    node back to its state id and ``goal_node`` marks the node pinned by the
    solver. Geometry caches (areas, basis gradients, adjacency) are built
    lazily and shared by every value function on the mesh.
    """

    nodes: np.ndarray  # (n_nodes, 2)
    triangles: np.ndarray  # (n_tris, 3), CCW
    node_state: np.ndarray  # (n_nodes,)
    goal_node: int

    def __post_init__(self) -> None:
        if len(self.nodes) == 0 or len(self.triangles) == 0:
            raise MeshError("mesh has no nodes or no triangles")
        if self.areas.min() <= _MIN_AREA_KM2:
            raise MeshError("mesh contains a degenerate (non-CCW or zero-area) triangle")
        used = np.zeros(len(self.nodes), dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise MeshError("mesh contains nodes that belong to no triangle")
        for count in self.edge_triangles.values():
            if len(count) > 2:
                raise MeshError("non-conforming mesh: an edge is shared by >2 triangles")

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        return 0.5 * _cross_z(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Constant P1 basis gradients per element, shape (n_tris, 3, 2)."""
        p = self.nodes[self.triangles]
        out = np.empty((len(self.triangles), 3, 2))
        for local, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
            edge = p[:, k] - p[:, j]
            out[:, local, 0] = -edge[:, 1]
            out[:, local, 1] = edge[:, 0]
        out /= (2.0 * self.areas)[:, None, None]
        return out

    @cached_property
    def _bary_frames(self) -> tuple[np.ndarray, np.ndarray]:
        p = self.nodes[self.triangles]
        mats = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        return np.linalg.inv(mats), p[:, 0]

    @cached_property
    def node_triangles(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for e, tri in enumerate(self.triangles):
            for n in tri:
                adj[n].append(e)
        return adj

    @cached_property
    def edge_triangles(self) -> dict[tuple[int, int], list[int]]:
        edges: dict[tuple[int, int], list[int]] = {}
        for e, (a, b, c) in enumerate(self.triangles):
            for u, v in ((a, b), (b, c), (c, a)):
                edges.setdefault((min(u, v), max(u, v)), []).append(e)
        return edges

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        ids = sorted(
            {n for edge, tris in self.edge_triangles.items() if len(tris) == 1 for n in edge}
        )
        return np.asarray(ids, dtype=np.int64)

    def barycentric(self, p: Point2 | np.ndarray) -> np.ndarray:
        """Barycentric coordinates of one point in every triangle, (n_tris, 3)."""
        inv, r0 = self._bary_frames
        v = np.asarray(p, dtype=float) - r0
        lam12 = np.einsum("eij,ej->ei", inv, v)
        lam0 = 1.0 - lam12.sum(axis=1)
        return np.column_stack([lam0, lam12])

    def locate(self, p: Point2 | np.ndarray) -> tuple[int, np.ndarray]:
        """Containing triangle and barycentric weights; DomainError outside."""
        lam = self.barycentric(p)
        mins = lam.min(axis=1)
        e = int(np.argmax(mins))
        if mins[e] < -_BARY_TOL:
            raise DomainError(f"point {tuple(np.asarray(p))} outside mesh cover")
        return e, lam[e]

    def locate_many(
        self, points: np.ndarray, clamp: bool = False, chunk: int = 512
    ) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized point location; optionally projects uncovered points."""
        points = np.asarray(points, dtype=float)
        inv, r0 = self._bary_frames
        tri_idx = np.empty(len(points), dtype=np.int64)
        lams = np.empty((len(points), 3))
        for lo in range(0, len(points), chunk):
            pts = points[lo : lo + chunk]
            v = pts[:, None, :] - r0[None, :, :]
            lam12 = np.einsum("eij,pej->pei", inv, v)
            lam0 = 1.0 - lam12.sum(axis=2)
            lam = np.concatenate([lam0[:, :, None], lam12], axis=2)
            mins = lam.min(axis=2)
            best = np.argmax(mins, axis=1)
            rows = np.arange(len(pts))
            tri_idx[lo : lo + chunk] = best
            lams[lo : lo + chunk] = lam[rows, best]
            bad = mins[rows, best] < -_BARY_TOL
            if bad.any():
                if not clamp:
                    raise DomainError("a query point lies outside the mesh cover")
                for r in np.nonzero(bad)[0]:
                    proj = self.project(Point2(*pts[r]))
                    e, l = self.locate(proj)
                    tri_idx[lo + r] = e
                    lams[lo + r] = l
        return tri_idx, np.clip(lams, 0.0, 1.0)

    def covers(self, p: Point2 | np.ndarray) -> bool:
        return bool(self.barycentric(p).min(axis=1).max() >= -_BARY_TOL)

    def nearest_node(self, p: Point2 | np.ndarray) -> int:
        d = self.nodes - np.asarray(p, dtype=float)
        return int(np.argmin(np.einsum("nd,nd->n", d, d)))

    def project(self, p: Point2) -> Point2:
        """Closest point of the mesh cover (used for queries off the hull)."""
        if self.covers(p):
            return p
        q = np.asarray(p, dtype=float)
        best = None
        best_d = np.inf
        for a, b, c in self.triangles:
            for u, v in ((a, b), (b, c), (c, a)):
                pa, pb = self.nodes[u], self.nodes[v]
                ab = pb - pa
                t = np.clip(np.dot(q - pa, ab) / np.dot(ab, ab), 0.0, 1.0)
                cand = pa + t * ab
                d = np.dot(q - cand, q - cand)
                if d < best_d:
                    best_d = d
                    best = cand
        assert best is not None
        return Point2(float(best[0]), float(best[1]))

    @cached_property
    def hessian_patches(self) -> list[tuple[np.ndarray, np.ndarray | None]]:
        """Per node: patch node ids and the pseudo-inverse of the centered
        quadratic design matrix (None when the patch cannot support the fit)."""
        patches: list[tuple[np.ndarray, np.ndarray | None]] = []
        for n in range(self.n_nodes):
            ring = {n}
            for e in self.node_triangles[n]:
                ring.update(int(m) for m in self.triangles[e])
            if len(ring) < 6:
                for m in list(ring):
                    for e in self.node_triangles[m]:
                        ring.update(int(q) for q in self.triangles[e])
            ids = np.array(sorted(ring), dtype=np.int64)
            d = self.nodes[ids] - self.nodes[n]
            design = np.column_stack(
                [
                    np.ones(len(ids)),
                    d[:, 0],
                    d[:, 1],
                    d[:, 0] ** 2,
                    d[:, 0] * d[:, 1],
                    d[:, 1] ** 2,
                ]
            )
            if len(ids) < 6 or np.linalg.matrix_rank(design) < 6:
                patches.append((ids, None))
            else:
                patches.append((ids, np.linalg.pinv(design)))
        return patches


def _ccw(nodes: np.ndarray, tri: tuple[int, int, int]) -> tuple[int, int, int]:
    a, b, c = tri
    if _cross_z(nodes[b] - nodes[a], nodes[c] - nodes[a]) < 0:
        return a, c, b
    return a, b, c


def _full_grid_mesh(states: StateSpace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nodes = states.positions()
    tris = []
    for j in range(states.ny - 1):
        for i in range(states.nx - 1):
            sw = states.index(i, j)
            se = states.index(i + 1, j)
            ne = states.index(i + 1, j + 1)
            nw = states.index(i, j + 1)
            tris.append((sw, se, ne))
            tris.append((sw, ne, nw))
    return nodes, np.asarray(tris, dtype=np.int64), np.arange(states.n, dtype=np.int64)


def _checkerboard_mesh(states: StateSpace) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Even-parity states triangulated by the rotated lattice they induce.

    Every odd-parity grid point is the center of a diamond whose corners are
    even states; interior diamonds split along their horizontal diagonal and
    boundary diamonds contribute their single in-grid half, so the cover is
    the convex hull of the retained states.
    """
    if states.nx < 3 or states.ny < 3:
        raise MeshError("checkerboard meshing needs a grid of at least 3x3 states")
    kept = [s for s in range(states.n) if sum(states.coords(s)) % 2 == 0]
    node_of = {s: k for k, s in enumerate(kept)}
    nodes = states.positions()[kept]

    def nid(i: int, j: int) -> int | None:
        if 0 <= i < states.nx and 0 <= j < states.ny:
            return node_of[states.index(i, j)]
        return None

    tris: list[tuple[int, int, int]] = []
    for b in range(states.ny):
        for a in range(states.nx):
            if (a + b) % 2 == 0:
                continue
            w, s_, e, n_ = nid(a - 1, b), nid(a, b - 1), nid(a + 1, b), nid(a, b + 1)
            corners = [c for c in (w, s_, e, n_) if c is not None]
            if len(corners) == 4:
                tris.append((w, e, n_))
                tris.append((w, s_, e))
            elif len(corners) == 3:
                tris.append(_ccw(nodes, tuple(corners)))
    return nodes, np.asarray(tris, dtype=np.int64), np.asarray(kept, dtype=np.int64)


def _insert_goal_node(
    states: StateSpace,
    nodes: np.ndarray,
    tris: np.ndarray,
    node_state: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    """Conformingly add the goal state when checkerboard parity excluded it."""
    g = np.asarray(states.position(states.goal))
    gid = len(nodes)
    nodes = np.vstack([nodes, g])
    node_state = np.append(node_state, states.goal)

    probe = Mesh(nodes[:-1], tris, node_state[:-1], goal_node=0)
    lam_all = probe.barycentric(g)
    containing = [e for e in range(len(tris)) if lam_all[e].min() >= -_BARY_TOL]
    new_tris: list[tuple[int, int, int]] = []
    if not containing:
        # Cut corner of an even-sized board: hook the goal onto the hull edge
        # between its horizontal and vertical even neighbors.
        i, j = states.coords(states.goal)
        hi = i - 1 if i == states.nx - 1 else i + 1
        vj = j - 1 if j == states.ny - 1 else j + 1
        h = int(np.nonzero(node_state == states.index(hi, j))[0][0])
        v = int(np.nonzero(node_state == states.index(i, vj))[0][0])
        keep = [tuple(t) for t in tris]
        keep.append(_ccw(nodes, (h, v, gid)))
        new_tris = keep
    else:
        keep = [tuple(t) for e, t in enumerate(tris) if e not in set(containing)]
        for e in containing:
            lam = lam_all[e]
            tri = tris[e]
            zero = [l for l in range(3) if lam[l] < _BARY_TOL]
            if len(zero) == 1:
                # Goal on an edge: split the triangle across it.
                o = tri[zero[0]]
                u, v = [tri[l] for l in range(3) if l != zero[0]]
                keep.append(_ccw(nodes, (u, gid, o)))
                keep.append(_ccw(nodes, (gid, v, o)))
            else:
                # Strictly interior: fan out to the three vertices.
                a, b, c = tri
                keep.extend([(a, b, gid), (b, c, gid), (c, a, gid)])
        new_tris = keep
    return nodes, np.asarray(new_tris, dtype=np.int64), node_state, gid


def build_mesh(states: StateSpace, k: int = 1) -> Mesh:
    """Triangulate the state grid (k=1) or its checkerboard subset (k=2)."""
    if k == 1:
        nodes, tris, node_state = _full_grid_mesh(states)
        goal_node = int(states.goal)
    elif k == 2:
        nodes, tris, node_state = _checkerboard_mesh(states)
        hits = np.nonzero(node_state == states.goal)[0]
        if len(hits) == 1:
            goal_node = int(hits[0])
        else:
            nodes, tris, node_state, goal_node = _insert_goal_node(states, nodes, tris, node_state)
    else:
        raise MeshError(f"subsample factor k must be 1 or 2, got {k}")
    return Mesh(nodes, tris, node_state, goal_node)


@dataclass(eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray


def element_matrices(
    coords: np.ndarray, diffusion: np.ndarray, drift: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw P1 element blocks for one triangle: stiffness (grad . sigma grad),
    mass, and advection (drift . grad against the basis). Exposed for tests."""
    area = 0.5 * float(_cross_z(coords[1] - coords[0], coords[2] - coords[0]))
    grads = np.empty((3, 2))
    for local, (j, k) in enumerate(((1, 2), (2, 0), (0, 1))):
        edge = coords[k] - coords[j]
        grads[local] = (-edge[1], edge[0])
    grads /= 2.0 * area
    stiffness = area * grads @ diffusion @ grads.T
    mass = area / 12.0 * (np.ones((3, 3)) + np.eye(3))
    advection = np.tile(area / 3.0 * (grads @ drift), (3, 1))
    return stiffness, mass, advection


def assemble(mesh: Mesh, coeffs: PdeCoefficients) -> SparseSystem:
    """Galerkin assembly of the drift-diffusion-reaction weak form.

    Coefficients are node-sampled and treated as element constants (vertex
    averages). The curvature term is the non-divergence contraction of the
    second moment against the value Hessian, assembled as the integrated-by-
    parts divergence form plus a drift correction of minus half the second
    moment's divergence (from its P1 interpolant); the two forms coincide
    wherever the second-moment field is constant. The zero-flux side
    condition is natural, so no boundary term appears; the goal constraint
    is applied separately.
    """
    if len(coeffs.source) != mesh.n_nodes:
        raise ValueError("coefficient arrays must have one entry per mesh node")
    gamma = coeffs.gamma
    tris = mesh.triangles
    area = mesh.areas
    grads = mesh.basis_gradients
    sig_v = coeffs.diffusion[tris]
    sig_e = sig_v.mean(axis=1)
    div_sig = np.einsum("eic,eicd->ed", grads, sig_v)
    mu_eff = coeffs.drift[tris].mean(axis=1) - 0.5 * div_sig
    src_e = coeffs.source[tris].mean(axis=1)

    stiff = np.einsum("e,eid,edc,ejc->eij", area, grads, sig_e, grads)
    mass = (np.ones((3, 3)) + np.eye(3))[None, :, :] * (area / 12.0)[:, None, None]
    adv_row = np.einsum("ejd,ed->ej", grads, mu_eff) * (area / 3.0)[:, None]
    adv = np.repeat(adv_row[:, None, :], 3, axis=1)

    local = gamma * adv - 0.5 * gamma * stiff - (1.0 - gamma) * mass
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    matrix = sp.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes)
    ).tocsr()

    rhs = np.zeros(mesh.n_nodes)
    np.add.at(rhs, tris.ravel(), np.repeat(-src_e * area / 3.0, 3))
    return SparseSystem(matrix, rhs)


def constrain_goal(system: SparseSystem, goal_node: int) -> SparseSystem:
    """Pin the goal value to zero by symmetric elimination.

    The constrained value is zero, so no contribution moves to the right-hand
    side; the goal row and column are cleared and replaced by an identity row.
    """
    n = system.matrix.shape[0]
    if not 0 <= goal_node < n:
        raise ValueError("goal node out of range")
    k = system.matrix.tolil(copy=True)
    rhs = system.rhs.copy()
    k[goal_node, :] = 0.0
    k[:, goal_node] = 0.0
    k[goal_node, goal_node] = 1.0
    rhs[goal_node] = 0.0
    return SparseSystem(k.tocsr(), rhs)


def solve(system: SparseSystem) -> np.ndarray:
    """Direct sparse solve with a relative residual gate of 1e-8."""
    coeffs = spla.spsolve(system.matrix.tocsc(), system.rhs)
    residual = np.max(np.abs(system.matrix @ coeffs - system.rhs))
    denom = max(1.0, float(np.max(np.abs(system.rhs))))
    if not residual / denom < 1e-8:
        raise NumericalError(f"linear solve residual {residual:.3e} exceeds tolerance")
    return coeffs


def element_peclet(mesh: Mesh, coeffs: PdeCoefficients) -> np.ndarray:
    """Advection/diffusion strength ratio per element (stability diagnostic)."""
    tris = mesh.triangles
    p = mesh.nodes[tris]
    h = np.max(
        [
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
        ],
        axis=0,
    )
    mu_e = coeffs.drift[tris].mean(axis=1)
    sig_e = coeffs.diffusion[tris].mean(axis=1)
    lam_min = np.linalg.eigvalsh(sig_e)[:, 0]
    return np.linalg.norm(mu_e, axis=1) * h / np.maximum(0.5 * lam_min, 1e-12)


@dataclass(eq=False)
class ContinuousValue:
    """P1 value function: a mesh plus nodal coefficients.

    Evaluation is barycentric interpolation; gradients are element-constant
    with area-weighted averaging at nodes and edges; second derivatives come
    from a least-squares quadratic fit over the patch around the nearest node
    (zero, by policy, where the patch cannot support the fit).
    """

    mesh: Mesh
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        if self.coefficients.shape != (self.mesh.n_nodes,):
            raise ValueError("need exactly one coefficient per mesh node")

    @cached_property
    def element_gradients(self) -> np.ndarray:
        return np.einsum(
            "eid,ei->ed", self.mesh.basis_gradients, self.coefficients[self.mesh.triangles]
        )

    @cached_property
    def node_gradients(self) -> np.ndarray:
        num = np.zeros((self.mesh.n_nodes, 2))
        den = np.zeros(self.mesh.n_nodes)
        weighted = self.element_gradients * self.mesh.areas[:, None]
        for local in range(3):
            np.add.at(num, self.mesh.triangles[:, local], weighted)
            np.add.at(den, self.mesh.triangles[:, local], self.mesh.areas)
        return num / den[:, None]

    def evaluate(self, p: Point2 | np.ndarray) -> float:
        e, lam = self.mesh.locate(p)
        return float(lam @ self.coefficients[self.mesh.triangles[e]])

    def evaluate_clamped(self, p: Point2) -> float:
        return self.evaluate(self.mesh.project(Point2(*np.asarray(p, dtype=float))))

    def evaluate_many(self, points: np.ndarray, clamp: bool = False) -> np.ndarray:
        tri_idx, lams = self.mesh.locate_many(points, clamp=clamp)
        return np.einsum("pl,pl->p", lams, self.coefficients[self.mesh.triangles[tri_idx]])

    def gradient(self, p: Point2 | np.ndarray) -> np.ndarray:
        nearest = self.mesh.nearest_node(p)
        if np.linalg.norm(self.mesh.nodes[nearest] - np.asarray(p, dtype=float)) < _NODE_TOL_KM:
            return self.node_gradients[nearest].copy()
        e, lam = self.mesh.locate(p)
        on = np.nonzero(lam < _BARY_TOL)[0]
        if len(on) == 0:
            return self.element_gradients[e].copy()
        # On an edge: area-weighted average over the triangles sharing it.
        tri = self.mesh.triangles[e]
        u, v = [int(tri[l]) for l in range(3) if l != on[0]]
        elems = self.mesh.edge_triangles[(min(u, v), max(u, v))]
        w = self.mesh.areas[elems]
        return (self.element_gradients[elems] * w[:, None]).sum(axis=0) / w.sum()

    def hessian(self, p: Point2 | np.ndarray) -> np.ndarray:
        if not self.mesh.covers(p):
            raise DomainError(f"point {tuple(np.asarray(p))} outside mesh cover")
        ids, pinv = self.mesh.hessian_patches[self.mesh.nearest_node(p)]
        if pinv is None:
            return np.zeros((2, 2))
        c = pinv @ self.coefficients[ids]
        return np.array([[2.0 * c[3], c[4]], [c[4], 2.0 * c[5]]])

    def hessian_fit_ok(self, p: Point2 | np.ndarray) -> bool:
        """False when the nearest node's patch fell back to a zero fit."""
        return self.mesh.hessian_patches[self.mesh.nearest_node(p)][1] is not None


def write_mesh_csv(nodes_path, tris_path, mesh: Mesh) -> None:
    with open(nodes_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node_id", "state_id", "x_km", "y_km"])
        for n in range(mesh.n_nodes):
            writer.writerow(
                [n, int(mesh.node_state[n]), repr(float(mesh.nodes[n, 0])), repr(float(mesh.nodes[n, 1]))]
            )
    with open(tris_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tri_id", "n0", "n1", "n2"])
        for e, (a, b, c) in enumerate(mesh.triangles):
            writer.writerow([e, int(a), int(b), int(c)])


def write_raster_csv(
    path, value: ContinuousValue, bounds: tuple[float, float, float, float], n: int
) -> None:
    """Dense n-by-n sample of the value over (x0, x1, y0, y1) for plotting.

    Points outside the mesh cover are evaluated at their projection onto it,
    so the raster stays rectangular.
    """
    x0, x1, y0, y1 = bounds
    xs = np.linspace(x0, x1, n)
    ys = np.linspace(y0, y1, n)
    grid = np.array([(x, y) for y in ys for x in xs])
    vals = value.evaluate_many(grid, clamp=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x_km", "y_km", "value"])
        for (x, y), v in zip(grid, vals):
            writer.writerow([repr(float(x)), repr(float(y)), repr(float(v))])
