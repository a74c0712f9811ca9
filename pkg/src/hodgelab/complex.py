"""Oriented simplicial meshes of closed model manifolds.

Simplices of every degree are stored with sorted vertex indices plus an
explicit orientation sign (+1/-1).  Boundary operators follow the usual
alternating-face rule, so ``boundary(p) @ boundary(p + 1) == 0`` can be
checked exactly in integers.

Flat tori carry their period in the metadata; all geometry on them is
computed from minimum-image ("unwrapped") coordinates of each simplex.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

__all__ = [
    "ManifoldMetadata",
    "SimplicialComplex",
    "CochainOperator",
    "Violation",
    "ValidationReport",
    "generate_flat_torus",
    "generate_icosphere",
    "validate",
    "boundary_matrix",
    "euler_characteristic",
    "save_complex",
    "load_complex",
    "complex_from_dict",
    "complex_to_dict",
    "MAX_ICOSPHERE_LEVEL",
]

MAX_ICOSPHERE_LEVEL = 8

MANIFOLD_NAMES = ("torus1d", "torus2d", "torus3d", "sphere2")


@dataclass(frozen=True)
class ManifoldMetadata:
    name: str
    volume: float
    diameter: float
    curvature_bound: float
    period: float | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "volume": self.volume,
            "diameter": self.diameter,
            "curvature_bound": self.curvature_bound,
            "period": self.period,
        }


@dataclass(frozen=True, eq=False)
class SimplicialComplex:
    """Closed oriented simplicial n-manifold.

    Attributes
    ----------
    dim : int
        Manifold dimension ``n``.
    vertices : ndarray, shape (V, D)
        Vertex coordinates; ``D == n`` for flat tori, ``D == 3`` for the sphere.
    simplices : tuple of ndarray
        ``simplices[p]`` has shape ``(N_p, p + 1)`` with sorted vertex indices.
    orientation : tuple of ndarray
        ``orientation[p][i]`` is the sign of simplex ``i`` relative to its
        sorted vertex order.
    metadata : ManifoldMetadata
    """

    dim: int
    vertices: np.ndarray
    simplices: tuple
    orientation: tuple
    metadata: ManifoldMetadata
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        for arr in (self.vertices, *self.simplices, *self.orientation):
            arr.flags.writeable = False

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    def count(self, p: int) -> int:
        return self.simplices[p].shape[0]

    @property
    def counts(self) -> tuple:
        return tuple(s.shape[0] for s in self.simplices)

    def local_points(self, p: int, rows: np.ndarray | None = None) -> np.ndarray:
        """Coordinates of the vertices of p-simplices, shape ``(N, p+1, D)``.

        On tori each simplex is unwrapped relative to its first vertex.
        """
        simp = self.simplices[p] if rows is None else rows
        pts = self.vertices[simp]
        period = self.metadata.period
        if period is not None:
            delta = pts - pts[:, :1, :]
            delta -= period * np.round(delta / period)
            pts = pts[:, :1, :] + delta
        return pts


@dataclass(frozen=True)
class CochainOperator:
    """Sparse matrix mapping ``degree_in`` cochains to ``degree_out`` cochains."""

    matrix: sp.csr_matrix
    degree_in: int
    degree_out: int

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def cols(self) -> int:
        return self.matrix.shape[1]

    def __matmul__(self, other):
        if isinstance(other, CochainOperator):
            if other.degree_out != self.degree_in:
                raise ValueError("degree mismatch in operator composition")
            return CochainOperator(
                (self.matrix @ other.matrix).tocsr(), other.degree_in, self.degree_out
            )
        return self.matrix @ other

    @property
    def T(self) -> "CochainOperator":
        return CochainOperator(self.matrix.T.tocsr(), self.degree_out, self.degree_in)


# --------------------------------------------------------------------------
# combinatorics


def _row_index(table: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Row positions of ``queries`` inside ``table``; -1 where absent."""
    if len(queries) == 0:
        return np.zeros(0, dtype=np.int64)
    both = np.concatenate([table, queries])
    _, inv = np.unique(both, axis=0, return_inverse=True)
    inv = inv.ravel()
    lut = np.full(inv.max() + 1, -1, dtype=np.int64)
    lut[inv[: len(table)]] = np.arange(len(table))
    return lut[inv[len(table):]]


def _permutation_sign(rows: np.ndarray) -> np.ndarray:
    """Parity of the permutation sorting each row (+1 even, -1 odd)."""
    k = rows.shape[1]
    inversions = np.zeros(rows.shape[0], dtype=np.int64)
    for i in range(k):
        for j in range(i + 1, k):
            inversions += rows[:, i] > rows[:, j]
    return np.where(inversions % 2 == 0, 1, -1).astype(np.int8)


def _all_faces(top: np.ndarray, p: int) -> np.ndarray:
    """Sorted, de-duplicated p-faces of sorted top simplices."""
    k = top.shape[1]
    parts = [top[:, list(c)] for c in itertools.combinations(range(k), p + 1)]
    return np.unique(np.concatenate(parts), axis=0)


def _build(dim, vertices, top_sorted, top_sign, metadata) -> SimplicialComplex:
    simplices = [np.arange(len(vertices), dtype=np.int64)[:, None]]
    for p in range(1, dim):
        simplices.append(_all_faces(top_sorted, p))
    order = np.lexsort(top_sorted.T[::-1])
    simplices.append(top_sorted[order])
    orientation = [np.ones(len(s), dtype=np.int8) for s in simplices[:-1]]
    orientation.append(top_sign[order].astype(np.int8))
    return SimplicialComplex(
        dim=dim,
        vertices=np.ascontiguousarray(vertices, dtype=np.float64),
        simplices=tuple(np.ascontiguousarray(s, dtype=np.int64) for s in simplices),
        orientation=tuple(orientation),
        metadata=metadata,
    )


def _orient_sorted(oriented: np.ndarray, signs: np.ndarray):
    """Sort rows, folding the sorting parity into the orientation sign."""
    parity = _permutation_sign(oriented)
    return np.sort(oriented, axis=1), (parity * signs).astype(np.int8)


# --------------------------------------------------------------------------
# generators


def generate_flat_torus(
    dim: int, resolution: int, period: float = 2 * math.pi, split: str | None = None
) -> SimplicialComplex:
    """Triangulate the flat torus ``(R / period Z)^dim`` on a uniform grid.

    ``dim=1`` gives the cycle graph, ``dim=3`` the Freudenthal split of each
    cube into six tetrahedra.  For ``dim=2`` the default ``split`` is
    ``"zigzag"`` (odd rows shifted by half a cell, all triangles acute) when
    ``resolution`` is even and ``"diagonal"`` (right triangles) otherwise.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if int(resolution) != resolution or resolution < 3:
        raise ValueError(f"resolution must be an integer >= 3, got {resolution}")
    if not period > 0:
        raise ValueError("period must be positive")
    res = int(resolution)
    h = period / res

    if dim == 1:
        vertices = (np.arange(res) * h)[:, None]
        i = np.arange(res)
        top = np.stack([i, (i + 1) % res], axis=1)
    elif dim == 2:
        if split is None:
            split = "zigzag" if res % 2 == 0 else "diagonal"
        if split == "zigzag" and res % 2:
            raise ValueError("zigzag split needs an even resolution")
        if split not in ("zigzag", "diagonal"):
            raise ValueError(f"unknown split {split!r}")
        jj, ii = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
        ii, jj = ii.ravel(), jj.ravel()
        shift = 0.5 * (jj % 2) if split == "zigzag" else 0.0
        vertices = np.stack([(ii + shift) * h, jj * h], axis=1)

        def vid(i, j):
            return (j % res) * res + (i % res)

        a, b = vid(ii, jj), vid(ii + 1, jj)
        c, d = vid(ii, jj + 1), vid(ii + 1, jj + 1)
        if split == "diagonal":
            tris = [np.stack([a, b, d], 1), np.stack([a, d, c], 1)]
        else:
            even = (jj % 2) == 0
            up = np.where(even[:, None], np.stack([a, b, c], 1), np.stack([a, b, d], 1))
            down = np.where(even[:, None], np.stack([c, b, d], 1), np.stack([a, d, c], 1))
            tris = [up, down]
        top = np.concatenate(tris)
    else:
        kk, jj, ii = np.meshgrid(np.arange(res), np.arange(res), np.arange(res), indexing="ij")
        ii, jj, kk = ii.ravel(), jj.ravel(), kk.ravel()
        vertices = np.stack([ii, jj, kk], axis=1) * h

        def vid(x, y, z):
            return ((z % res) * res + (y % res)) * res + (x % res)

        base = np.stack([ii, jj, kk], axis=1)
        unit = np.eye(3, dtype=np.int64)
        tets = []
        for perm in itertools.permutations(range(3)):
            corner = base.copy()
            chain = [vid(*corner.T)]
            for axis in perm:
                corner = corner + unit[axis]
                chain.append(vid(*corner.T))
            tets.append(np.stack(chain, axis=1))
        top = np.concatenate(tets)

    top_sorted = np.sort(top, axis=1)
    pts = vertices[top_sorted]
    delta = pts[:, 1:, :] - pts[:, :1, :]
    delta -= period * np.round(delta / period)
    if dim == 1:
        signs = np.sign(delta[:, 0, 0])
    else:
        signs = np.sign(np.linalg.det(delta))
    meta = ManifoldMetadata(
        name=f"torus{dim}d",
        volume=float(period**dim),
        diameter=float(period * math.sqrt(dim) / 2),
        curvature_bound=0.0,
        period=float(period),
    )
    return _build(dim, vertices, top_sorted, signs, meta)


_ICOSAHEDRON_FACES = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ],
    dtype=np.int64,
)


def _icosahedron_vertices() -> np.ndarray:
    r = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, r, 0], [1, r, 0], [-1, -r, 0], [1, -r, 0],
            [0, -1, r], [0, 1, r], [0, -1, -r], [0, 1, -r],
            [r, 0, -1], [r, 0, 1], [-r, 0, -1], [-r, 0, 1],
        ],
        dtype=np.float64,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_icosphere(subdivision_level: int) -> SimplicialComplex:
    """Icosahedron split ``subdivision_level`` times, projected to the unit sphere."""
    level = int(subdivision_level)
    if level != subdivision_level or not 0 <= level <= MAX_ICOSPHERE_LEVEL:
        raise ValueError(f"subdivision_level must be in 0..{MAX_ICOSPHERE_LEVEL}")
    verts = _icosahedron_vertices()
    faces = _ICOSAHEDRON_FACES.copy()
    for _ in range(level):
        edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
        uniq, inv = np.unique(edges, axis=0, return_inverse=True)
        inv = inv.ravel()
        mid = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = len(faces)
        m01, m12, m20 = (inv[:m] + len(verts), inv[m:2 * m] + len(verts), inv[2 * m:] + len(verts))
        verts = np.concatenate([verts, mid])
        a, b, c = faces.T
        faces = np.concatenate(
            [
                np.stack([a, m01, m20], 1),
                np.stack([b, m12, m01], 1),
                np.stack([c, m20, m12], 1),
                np.stack([m01, m12, m20], 1),
            ]
        )
    # outward orientation: positive triple product
    p = verts[faces]
    outward = np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p.sum(axis=1))
    top_sorted, signs = _orient_sorted(faces, np.sign(outward).astype(np.int8))
    area = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1).sum()
    meta = ManifoldMetadata(
        name="sphere2", volume=float(area), diameter=math.pi, curvature_bound=1.0
    )
    return _build(2, verts, top_sorted, signs, meta)


# --------------------------------------------------------------------------
# operators and checks


def boundary_matrix(complex: SimplicialComplex, p: int) -> CochainOperator:
    """Signed integer incidence matrix from p-chains to (p-1)-chains."""
    if not 1 <= p <= complex.dim:
        raise ValueError(f"boundary degree must be in 1..{complex.dim}, got {p}")
    key = ("boundary", p)
    if key in complex._cache:
        return complex._cache[key]
    simp = complex.simplices[p]
    n = len(simp)
    rows, cols, vals = [], [], []
    faces_tab = complex.simplices[p - 1]
    for i in range(p + 1):
        face = np.delete(simp, i, axis=1)
        idx = _row_index(faces_tab, face)
        if np.any(idx < 0):
            bad = int(np.flatnonzero(idx < 0)[0])
            raise ValueError(f"face {face[bad].tolist()} of {p}-simplex {bad} is missing")
        rows.append(idx)
        cols.append(np.arange(n))
        vals.append(
            (-1) ** i * complex.orientation[p].astype(np.int64) * complex.orientation[p - 1][idx]
        )
    mat = sp.csr_matrix(
        (np.concatenate(vals).astype(np.int64), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(faces_tab), n),
    )
    op = CochainOperator(mat, degree_in=p, degree_out=p - 1)
    complex._cache[key] = op
    return op


def euler_characteristic(complex: SimplicialComplex) -> int:
    return int(sum((-1) ** p * c for p, c in enumerate(complex.counts)))


def circumcenters(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Circumcenters and their barycentric coordinates for a batch of simplices.

    ``points`` has shape ``(N, k+1, D)``; returns ``(centers (N, D), bary (N, k+1))``.
    """
    n, k1, _ = points.shape
    rel = points - points[:, :1, :]
    gram = np.einsum("nid,njd->nij", rel, rel)
    system = np.zeros((n, k1 + 1, k1 + 1))
    system[:, :k1, :k1] = 2.0 * gram
    system[:, :k1, k1] = 1.0
    system[:, k1, :k1] = 1.0
    rhs = np.zeros((n, k1 + 1))
    rhs[:, :k1] = np.einsum("nii->ni", gram)
    rhs[:, k1] = 1.0
    sol = np.linalg.solve(system, rhs[..., None])[..., 0]
    bary = sol[:, :k1]
    centers = np.einsum("ni,nid->nd", bary, points)
    return centers, bary


def simplex_volumes(points: np.ndarray) -> np.ndarray:
    """Unsigned k-volumes of a batch of k-simplices given as ``(N, k+1, D)``."""
    k = points.shape[1] - 1
    if k == 0:
        return np.ones(points.shape[0])
    edges = points[:, 1:, :] - points[:, :1, :]
    gram = np.einsum("nid,njd->nij", edges, edges)
    det = np.clip(np.linalg.det(gram), 0.0, None)
    return np.sqrt(det) / math.factorial(k)


@dataclass(frozen=True)
class Violation:
    invariant: str
    degree: int
    index: int
    detail: str

    def to_dict(self) -> dict:
        return {"invariant": self.invariant, "degree": self.degree, "index": self.index, "detail": self.detail}


@dataclass(frozen=True)
class ValidationReport:
    passed: bool
    dd_zero: bool
    closed: bool
    euler_characteristic: int
    counts: tuple
    min_angle_deg: float
    max_aspect_ratio: float
    well_centered: bool
    violations: tuple = ()

    @property
    def pass_(self) -> bool:
        return self.passed

    def to_dict(self) -> dict:
        return {
            "pass": self.passed,
            "dd_zero": self.dd_zero,
            "closed": self.closed,
            "euler_characteristic": self.euler_characteristic,
            "counts": list(self.counts),
            "min_angle_deg": self.min_angle_deg,
            "max_aspect_ratio": self.max_aspect_ratio,
            "well_centered": self.well_centered,
            "violations": [v.to_dict() for v in self.violations],
        }


def _triangle_min_angles(points: np.ndarray) -> np.ndarray:
    out = np.full(points.shape[0], np.pi)
    for i in range(3):
        a = points[:, (i + 1) % 3] - points[:, i]
        b = points[:, (i + 2) % 3] - points[:, i]
        cos = np.einsum("nd,nd->n", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
        out = np.minimum(out, np.arccos(np.clip(cos, -1.0, 1.0)))
    return out


def _aspect_ratios(complex: SimplicialComplex) -> np.ndarray:
    """Circumradius over ``n`` times inradius for top simplices (1 when regular)."""
    n = complex.dim
    pts = complex.local_points(n)
    if n == 1:
        return np.ones(len(pts))
    centers, _ = circumcenters(pts)
    radius = np.linalg.norm(pts[:, 0, :] - centers, axis=1)
    vol = simplex_volumes(pts)
    facet_area = np.zeros(len(pts))
    for i in range(n + 1):
        facet_area += simplex_volumes(np.delete(pts, i, axis=1))
    inradius = n * vol / facet_area
    return radius / (n * inradius)


def is_well_centered(complex: SimplicialComplex, tol: float = 1e-12):
    """Return ``(flag, (degree, index) of first offender or None)``."""
    for p in range(2, complex.dim + 1):
        _, bary = circumcenters(complex.local_points(p))
        bad = np.flatnonzero(bary.min(axis=1) <= tol)
        if bad.size:
            return False, (p, int(bad[0]))
    return True, None


def validate(complex: SimplicialComplex) -> ValidationReport:
    """Check the closed-manifold invariants; never raises on bad meshes."""
    n = complex.dim
    violations: list[Violation] = []
    nv = complex.num_vertices

    for p, simp in enumerate(complex.simplices):
        out_of_range = np.flatnonzero((simp < 0).any(axis=1) | (simp >= nv).any(axis=1))
        for i in out_of_range[:10]:
            violations.append(Violation("index_range", p, int(i), f"vertex index out of 0..{nv - 1}"))
        if p > 0:
            dup = np.flatnonzero((np.diff(np.sort(simp, axis=1), axis=1) == 0).any(axis=1))
            for i in dup[:10]:
                violations.append(Violation("distinct_vertices", p, int(i), "repeated vertex"))
    if violations:
        return ValidationReport(False, False, False, euler_characteristic(complex), complex.counts,
                                float("nan"), float("nan"), False, tuple(violations))

    dd_zero = True
    bnd = {}
    try:
        for p in range(1, n + 1):
            bnd[p] = boundary_matrix(complex, p).matrix
    except ValueError as exc:
        violations.append(Violation("faces_present", p, -1, str(exc)))
        return ValidationReport(False, False, False, euler_characteristic(complex), complex.counts,
                                float("nan"), float("nan"), False, tuple(violations))
    for p in range(1, n):
        prod = (bnd[p] @ bnd[p + 1]).tocsc()
        prod.eliminate_zeros()
        if prod.nnz:
            dd_zero = False
            col = int(prod.nonzero()[1][0])
            violations.append(Violation("dd_zero", p + 1, col, f"boundary_{p} @ boundary_{p + 1} != 0"))
    # coherent orientation: the signed sum of top simplices is a cycle
    fundamental = bnd[n] @ np.ones(complex.count(n), dtype=np.int64)
    bad = np.flatnonzero(fundamental)
    if bad.size:
        dd_zero = False
        face = int(bad[0])
        cofaces = bnd[n].getrow(face).indices
        violations.append(
            Violation("dd_zero", n, int(cofaces[0]) if cofaces.size else -1,
                      f"incoherent orientation across {n - 1}-face {face}")
        )

    incidence = np.diff(bnd[n].indptr) if n > 0 else None
    closed = True
    bad_faces = np.flatnonzero(incidence != 2)
    if bad_faces.size:
        closed = False
        for i in bad_faces[:10]:
            violations.append(Violation("closed", n - 1, int(i), f"face in {incidence[i]} top simplices"))

    vol = simplex_volumes(complex.local_points(n))
    degenerate = np.flatnonzero(vol < 1e-14 * vol.mean())
    for i in degenerate[:10]:
        violations.append(Violation("nondegenerate", n, int(i), "zero volume"))

    if n >= 2:
        min_angle = float(np.degrees(_triangle_min_angles(complex.local_points(2)).min()))
    else:
        min_angle = 180.0
    aspect = float(_aspect_ratios(complex).max())
    well_centered, _ = is_well_centered(complex)

    chi = euler_characteristic(complex)
    passed = dd_zero and closed and not degenerate.size
    return ValidationReport(passed, dd_zero, closed, chi, complex.counts, min_angle, aspect,
                            well_centered, tuple(violations))


# --------------------------------------------------------------------------
# serialization


def complex_to_dict(complex: SimplicialComplex) -> dict:
    simplices = {}
    for p in range(1, complex.dim + 1):
        rows = complex.simplices[p].copy()
        flip = complex.orientation[p] < 0
        rows[flip, 0], rows[flip, 1] = complex.simplices[p][flip, 1], complex.simplices[p][flip, 0]
        simplices[str(p)] = rows.tolist()
    return {
        "dim": complex.dim,
        "metadata": complex.metadata.to_dict(),
        "vertices": complex.vertices.tolist(),
        "simplices": simplices,
    }


def complex_from_dict(doc: dict) -> SimplicialComplex:
    dim = int(doc["dim"])
    meta = ManifoldMetadata(**{k: doc["metadata"].get(k) for k in
                               ("name", "volume", "diameter", "curvature_bound", "period")})
    vertices = np.asarray(doc["vertices"], dtype=np.float64).reshape(len(doc["vertices"]), -1)
    simplices = [np.arange(len(vertices), dtype=np.int64)[:, None]]
    orientation = [np.ones(len(vertices), dtype=np.int8)]
    for p in range(1, dim + 1):
        rows = np.asarray(doc["simplices"][str(p)], dtype=np.int64).reshape(-1, p + 1)
        s, sign = _orient_sorted(rows, np.ones(len(rows), dtype=np.int8))
        simplices.append(s)
        orientation.append(sign)
    return SimplicialComplex(dim, vertices, tuple(simplices), tuple(orientation), meta)


def save_complex(complex: SimplicialComplex, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(complex_to_dict(complex)))
    tmp.replace(path)


def load_complex(path) -> SimplicialComplex:
    return complex_from_dict(json.loads(Path(path).read_text()))
