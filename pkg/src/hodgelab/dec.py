"""Discrete exterior calculus operators on a :class:`SimplicialComplex`.

The Hodge Laplacian on p-cochains is assembled in weak form as the pair
``(K_p, M_p)`` with

    K_p = d_p^T S_{p+1} d_p + S_p d_{p-1} S_{p-1}^{-1} d_{p-1}^T S_p,
    M_p = S_p,

where ``S_p`` is the diagonal Hodge star on p-cochains.  Eigenpairs of
``K x = lam M x`` discretize ``Delta phi = -lam phi``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .complex import (
    CochainOperator,
    SimplicialComplex,
    _row_index,
    boundary_matrix,
    circumcenters,
    is_well_centered,
    simplex_volumes,
)

__all__ = [
    "CochainOperator",
    "DiagonalStar",
    "LaplacePair",
    "DegenerateMeshError",
    "NotWellCenteredError",
    "coboundary",
    "hodge_star",
    "hodge_laplacian",
    "resolve_scheme",
    "pointwise_value_norm",
    "pointwise_gradient_norm",
    "vertex_gradients",
    "vertex_form_components",
    "dirichlet_energy",
    "constant_form_cochains",
    "near_nullspace",
    "write_matrix_market",
    "read_matrix_market",
]

SCHEMES = ("barycentric", "circumcentric")


class DegenerateMeshError(ValueError):
    pass


class NotWellCenteredError(ValueError):
    pass


@dataclass(frozen=True)
class DiagonalStar:
    degree: int
    values: np.ndarray
    scheme: str

    @property
    def matrix(self) -> sp.dia_matrix:
        return sp.diags(self.values)


@dataclass(frozen=True)
class LaplacePair:
    stiffness: sp.csr_matrix
    mass: np.ndarray  # diagonal entries of M_p
    degree: int
    scheme: str = "barycentric"

    @property
    def dim(self) -> int:
        return self.stiffness.shape[0]

    @property
    def mass_matrix(self) -> sp.dia_matrix:
        return sp.diags(self.mass)


def coboundary(complex: SimplicialComplex, p: int) -> CochainOperator:
    """``d_p``: p-cochains to (p+1)-cochains, the transpose of the boundary."""
    if not 0 <= p <= complex.dim - 1:
        raise ValueError(f"coboundary degree must be in 0..{complex.dim - 1}, got {p}")
    key = ("coboundary", p)
    if key not in complex._cache:
        b = boundary_matrix(complex, p + 1).matrix
        complex._cache[key] = CochainOperator(b.T.astype(np.float64).tocsr(), p, p + 1)
    return complex._cache[key]


# --------------------------------------------------------------------------
# Hodge stars


def _check_degenerate(complex: SimplicialComplex) -> np.ndarray:
    vol = simplex_volumes(complex.local_points(complex.dim))
    bad = np.flatnonzero(vol < 1e-14 * vol.mean())
    if bad.size:
        raise DegenerateMeshError(f"degenerate {complex.dim}-simplex {int(bad[0])} (volume {vol[bad[0]]:.3e})")
    return vol


def _dual_volumes(complex: SimplicialComplex, scheme: str) -> list:
    """Dual cell volumes for every degree, summed over flags of each top simplex."""
    key = ("dual_volumes", scheme)
    if key in complex._cache:
        return complex._cache[key]
    n = complex.dim
    top = complex.simplices[n]
    pts = complex.local_points(n)
    centers = {}
    for size in range(1, n + 2):
        for subset in itertools.combinations(range(n + 1), size):
            sub = pts[:, list(subset), :]
            if size == 1:
                centers[subset] = sub[:, 0, :]
            elif scheme == "barycentric":
                centers[subset] = sub.mean(axis=1)
            else:
                centers[subset] = circumcenters(sub)[0]
    out = []
    for p in range(n + 1):
        dual = np.zeros(complex.count(p))
        for subset in itertools.combinations(range(n + 1), p + 1):
            rest = [v for v in range(n + 1) if v not in subset]
            piece = np.zeros(len(top))
            for order in itertools.permutations(rest):
                chain = [subset]
                cur = list(subset)
                for v in order:
                    cur = sorted(cur + [v])
                    chain.append(tuple(cur))
                cell = np.stack([centers[c] for c in chain], axis=1)
                piece += simplex_volumes(cell)
            idx = _row_index(complex.simplices[p], top[:, list(subset)])
            np.add.at(dual, idx, piece)
        out.append(dual)
    complex._cache[key] = out
    return out


def _primal_volumes(complex: SimplicialComplex, p: int) -> np.ndarray:
    key = ("primal_volumes", p)
    if key not in complex._cache:
        complex._cache[key] = simplex_volumes(complex.local_points(p))
    return complex._cache[key]


def hodge_star(complex: SimplicialComplex, p: int, scheme: str = "barycentric") -> DiagonalStar:
    """Diagonal Hodge star: dual cell volume over primal simplex volume."""
    if not 0 <= p <= complex.dim:
        raise ValueError(f"star degree must be in 0..{complex.dim}, got {p}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown star scheme {scheme!r}")
    _check_degenerate(complex)
    if scheme == "circumcentric":
        ok, where = is_well_centered(complex)
        if not ok:
            raise NotWellCenteredError(
                f"circumcentric star needs a well-centered mesh; {where[0]}-simplex {where[1]} "
                "does not contain its circumcenter"
            )
    values = _dual_volumes(complex, scheme)[p] / _primal_volumes(complex, p)
    if np.any(values <= 0):
        bad = int(np.flatnonzero(values <= 0)[0])
        raise DegenerateMeshError(f"non-positive star entry at {p}-simplex {bad}")
    return DiagonalStar(p, values, scheme)


def resolve_scheme(complex: SimplicialComplex, scheme: str) -> str:
    """Map ``"auto"`` to circumcentric on well-centered meshes, else barycentric."""
    if scheme == "auto":
        return "circumcentric" if is_well_centered(complex)[0] else "barycentric"
    if scheme not in SCHEMES:
        raise ValueError(f"unknown star scheme {scheme!r}")
    return scheme


def hodge_laplacian(complex: SimplicialComplex, p: int, scheme: str = "auto") -> LaplacePair:
    if not 0 <= p <= complex.dim:
        raise ValueError(f"form degree must be in 0..{complex.dim}, got {p}")
    scheme = resolve_scheme(complex, scheme)
    key = ("laplacian", p, scheme)
    if key in complex._cache:
        return complex._cache[key]
    star_p = hodge_star(complex, p, scheme).values
    size = complex.count(p)
    k = sp.csr_matrix((size, size))
    if p < complex.dim:
        d = coboundary(complex, p).matrix
        star_up = hodge_star(complex, p + 1, scheme).values
        k = k + (d.T @ sp.diags(star_up) @ d)
    if p > 0:
        d_low = coboundary(complex, p - 1).matrix
        star_low = hodge_star(complex, p - 1, scheme).values
        half = sp.diags(star_p) @ d_low
        k = k + (half @ sp.diags(1.0 / star_low) @ half.T)
    k = sp.csr_matrix(k)
    k = ((k + k.T) * 0.5).tocsr()
    k.sum_duplicates()
    k.sort_indices()
    pair = LaplacePair(k, star_p, p, scheme)
    complex._cache[key] = pair
    return pair


# --------------------------------------------------------------------------
# pointwise recovery


def _barycentric_gradients(complex: SimplicialComplex) -> np.ndarray:
    """Gradients of barycentric coordinates, shape ``(N_top, n+1, D)``."""
    key = ("bary_grad",)
    if key not in complex._cache:
        pts = complex.local_points(complex.dim)
        edges = pts[:, 1:, :] - pts[:, :1, :]  # (N, n, D)
        grads = np.linalg.pinv(edges)  # (N, D, n)
        g = np.transpose(grads, (0, 2, 1))
        g0 = -g.sum(axis=1, keepdims=True)
        complex._cache[key] = np.concatenate([g0, g], axis=1)
    return complex._cache[key]


def _vertex_average(complex: SimplicialComplex) -> sp.csr_matrix:
    """Volume-weighted averaging from top simplices to vertices."""
    key = ("vertex_average",)
    if key not in complex._cache:
        n = complex.dim
        top = complex.simplices[n]
        vol = _primal_volumes(complex, n)
        rows = top.ravel()
        cols = np.repeat(np.arange(len(top)), n + 1)
        w = sp.csr_matrix((np.repeat(vol, n + 1), (rows, cols)), shape=(complex.num_vertices, len(top)))
        total = np.asarray(w.sum(axis=1)).ravel()
        complex._cache[key] = (sp.diags(1.0 / total) @ w).tocsr()
    return complex._cache[key]


def _vertex_normals(complex: SimplicialComplex) -> np.ndarray | None:
    if complex.ambient_dim == complex.dim:
        return None
    key = ("vertex_normals",)
    if key not in complex._cache:
        pts = complex.local_points(2)
        cross = np.cross(pts[:, 1] - pts[:, 0], pts[:, 2] - pts[:, 0])
        cross *= complex.orientation[2][:, None]
        normals = np.zeros_like(complex.vertices)
        for i in range(3):
            np.add.at(normals, complex.simplices[2][:, i], cross)
        complex._cache[key] = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return complex._cache[key]


def _as_columns(complex, p, cochain):
    arr = np.asarray(cochain, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[:, None]
    if arr.shape[0] != complex.count(p):
        raise ValueError(f"cochain length {arr.shape[0]} does not match {complex.count(p)} {p}-simplices")
    return arr, single


def simplex_gradients(complex: SimplicialComplex, scalar_cochain) -> np.ndarray:
    """Constant gradient of the P1 interpolant on each top simplex, ``(N_top, D, k)``."""
    x, _ = _as_columns(complex, 0, scalar_cochain)
    g = _barycentric_gradients(complex)
    vals = x[complex.simplices[complex.dim]]  # (N, n+1, k)
    return np.einsum("nid,nik->ndk", g, vals)


def vertex_gradients(complex: SimplicialComplex, scalar_cochain) -> np.ndarray:
    """Volume-averaged gradient vectors at vertices, shape ``(V, D, k)``.

    On embedded surfaces the normal component is removed.
    """
    x, _ = _as_columns(complex, 0, scalar_cochain)
    per_simplex = simplex_gradients(complex, x)
    n_top, d, k = per_simplex.shape
    avg = _vertex_average(complex)
    out = (avg @ per_simplex.reshape(n_top, d * k)).reshape(-1, d, k)
    normals = _vertex_normals(complex)
    if normals is not None:
        out -= normals[:, :, None] * np.einsum("vd,vdk->vk", normals, out)[:, None, :]
    return out


def pointwise_gradient_norm(complex: SimplicialComplex, scalar_cochain) -> np.ndarray:
    grads = vertex_gradients(complex, scalar_cochain)
    out = np.linalg.norm(grads, axis=1)
    return out[:, 0] if np.ndim(scalar_cochain) == 1 else out


def _whitney_tables(complex: SimplicialComplex, p: int):
    """Whitney p-form components at top-simplex barycenters.

    Returns ``(table, index, sign)`` where ``table`` has shape
    ``(N_top, F, C)`` for the ``F`` local p-faces and ``C = binom(D, p)``
    form components; ``index``/``sign`` give the global face and its
    orientation, both ``(N_top, F)``.
    """
    key = ("whitney", p)
    if key in complex._cache:
        return complex._cache[key]
    n, dd = complex.dim, complex.ambient_dim
    g = _barycentric_gradients(complex)
    top = complex.simplices[n]
    comps = list(itertools.combinations(range(dd), p))
    faces = list(itertools.combinations(range(n + 1), p + 1))
    table = np.zeros((len(top), len(faces), len(comps)))
    index = np.zeros((len(top), len(faces)), dtype=np.int64)
    scale = math.factorial(p) / (n + 1)
    for f, face in enumerate(faces):
        for i in range(p + 1):
            rest = [face[j] for j in range(p + 1) if j != i]
            for c, comp in enumerate(comps):
                if p == 0:
                    val = np.ones(len(top))
                else:
                    minor = g[:, rest, :][:, :, list(comp)]
                    val = np.linalg.det(minor)
                table[:, f, c] += (-1) ** i * scale * val
        index[:, f] = _row_index(complex.simplices[p], top[:, list(face)])
    sign = complex.orientation[p][index].astype(np.float64)
    complex._cache[key] = (table, index, sign)
    return table, index, sign


def simplex_form_components(complex: SimplicialComplex, p: int, cochain) -> np.ndarray:
    """Whitney-interpolated form components per top simplex, ``(N_top, C, k)``."""
    x, _ = _as_columns(complex, p, cochain)
    table, index, sign = _whitney_tables(complex, p)
    vals = x[index] * sign[:, :, None]  # (N, F, k)
    return np.einsum("nfc,nfk->nck", table, vals)


def vertex_form_components(complex: SimplicialComplex, p: int, cochain) -> np.ndarray:
    """Volume-averaged Whitney form components at vertices, ``(V, C, k)``."""
    per_simplex = simplex_form_components(complex, p, cochain)
    n_top, c, k = per_simplex.shape
    return (_vertex_average(complex) @ per_simplex.reshape(n_top, c * k)).reshape(-1, c, k)


def pointwise_value_norm(complex: SimplicialComplex, p: int, cochain) -> np.ndarray:
    """Pointwise norm ``|omega|`` at vertices.

    ``p = 0`` returns absolute vertex values; higher degrees average the
    per-simplex norm of the Whitney interpolant with volume weights.
    """
    x, single = _as_columns(complex, p, cochain)
    if p == 0:
        out = np.abs(x)
    else:
        norms = np.linalg.norm(simplex_form_components(complex, p, x), axis=1)
        out = _vertex_average(complex) @ norms
    return out[:, 0] if single else out


def constant_form_cochains(complex: SimplicialComplex, p: int) -> np.ndarray:
    """Integrals of the ambient constant forms ``dx_I`` over each p-simplex.

    Returns shape ``(N_p, C)`` with ``C = binom(D, p)``. On flat tori these
    span the harmonic p-forms; elsewhere they are smooth test forms.
    """
    pts = complex.local_points(p)
    if p == 0:
        return np.ones((len(pts), 1))
    edges = pts[:, 1:, :] - pts[:, :1, :]
    comps = list(itertools.combinations(range(complex.ambient_dim), p))
    out = np.empty((len(pts), len(comps)))
    for c, comp in enumerate(comps):
        out[:, c] = np.linalg.det(edges[:, :, list(comp)]) / math.factorial(p)
    return out * complex.orientation[p][:, None]


def dirichlet_energy(complex: SimplicialComplex, scalar_cochain) -> np.ndarray:
    """P1 Dirichlet energy ``sum_T vol_T |grad x|^2`` for each column."""
    grads = simplex_gradients(complex, scalar_cochain)
    vol = _primal_volumes(complex, complex.dim)
    return np.einsum("n,ndk->k", vol, grads**2)


def near_nullspace(complex: SimplicialComplex, p: int):
    """Low-energy cochains that help AMG coarsening, or ``None``.

    On flat tori these are the constant ``p``-forms (the harmonic space);
    elsewhere only degree 0 has an obvious candidate, the constants.
    """
    if complex.metadata.period is not None:
        return constant_form_cochains(complex, p)
    if p == 0:
        return np.ones((complex.num_vertices, 1))
    return None


# --------------------------------------------------------------------------
# Matrix Market style export


def write_matrix_market(matrix, path, comment: str = "") -> None:
    """Write ``matrix`` as 1-based ``row col value`` triplets after a header."""
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = ["%%MatrixMarket matrix coordinate real general"]
    if comment:
        lines.append(f"% {comment}")
    lines.append(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}")
    lines.extend(
        f"{r + 1} {c + 1} {v!r}" for r, c, v in zip(coo.row[order].tolist(), coo.col[order].tolist(), coo.data[order].astype(float).tolist())
    )
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_market(path) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    shape = None
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("%"):
            continue
        parts = line.split()
        if shape is None:
            shape = (int(parts[0]), int(parts[1]))
            continue
        rows.append(int(parts[0]) - 1)
        cols.append(int(parts[1]) - 1)
        vals.append(float(parts[2]))
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)
