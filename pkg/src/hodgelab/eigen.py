"""Lowest eigenpairs of the symmetric generalized problem ``K x = lam M x``.

``M`` is always a positive diagonal (a Hodge star), so the mass inner
product is cheap and the dense oracle may reduce by ``M^{-1/2}``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dec import LaplacePair

__all__ = [
    "SolverConfig",
    "SpectralDecomposition",
    "ConvergenceError",
    "IllPosedError",
    "NoSpectralGapError",
    "solve_lowest",
    "solve_all_dense",
    "kernel_dimension",
    "kernel_gap",
    "save_decomposition",
    "load_decomposition",
    "DENSE_MAX_DIM",
]

DENSE_MAX_DIM = 2000
# automatic preconditioner: exact sparse LU up to this size, AMG beyond
LU_MAX_DIM = 60000
KRYLOV_MAX_BYTES = 600 * 2**20


class IllPosedError(ValueError):
    pass


class NoSpectralGapError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Raised when ``max_iter`` is exhausted; carries the partial result."""

    def __init__(self, message, partial, worst_residual):
        super().__init__(message)
        self.partial = partial
        self.worst_residual = worst_residual


@dataclass(frozen=True)
class SolverConfig:
    count: int
    tol: float = 1e-8
    max_iter: int = 1000
    block_size: int | None = None
    shift: float | None = None
    seed: int = 0
    drop_tol: float = 0.0
    preconditioner: str = "auto"

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not 0 < self.tol <= 1e-4:
            raise ValueError("tol must lie in (0, 1e-4]")
        if self.preconditioner not in ("auto", "lu", "ilu", "amg"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Ascending eigenvalues with M-orthonormal eigencochains as columns."""

    degree: int
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray
    config: dict
    method: str
    emergence: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    info: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    @property
    def dim(self) -> int:
        return self.eigenvectors.shape[0]

    def truncated(self, count: int) -> "SpectralDecomposition":
        return SpectralDecomposition(
            self.degree, self.eigenvalues[:count], self.eigenvectors[:, :count], self.residuals[:count],
            self.config, self.method, self.emergence[:count], dict(self.info),
        )


def _check_pair(pair: LaplacePair) -> None:
    if np.any(~np.isfinite(pair.mass)) or np.any(pair.mass <= 0):
        raise IllPosedError("mass matrix must be diagonal positive")
    k = pair.stiffness
    asym = abs(k - k.T).max() if k.nnz else 0.0
    scale = abs(k).max() if k.nnz else 1.0
    if asym > 1e-12 * scale:
        raise IllPosedError(f"stiffness is not symmetric (max asymmetry {asym:.3e})")


def _residuals(k, mass, vecs, vals, scale):
    r = k @ vecs - vecs * (mass[:, None] * 1.0) * vals[None, :]
    rnorm = np.sqrt(np.einsum("ij,ij->j", r, r / mass[:, None]))
    xnorm = np.sqrt(np.einsum("ij,ij->j", vecs, vecs * mass[:, None]))
    return rnorm / (xnorm * (np.abs(vals) + scale))


def _default_shift(pair: LaplacePair) -> float:
    return -1e-3 * pair.stiffness.diagonal().sum() / pair.mass.sum()


def _finalize_values(vals: np.ndarray, scale: float) -> np.ndarray:
    if vals.size and vals.min() < -1e-6 * scale:
        raise IllPosedError(f"stiffness is indefinite (eigenvalue {vals.min():.3e})")
    return np.where(vals < 0, 0.0, vals)


def _m_orthonormalize(y, sqrt_m):
    """M-orthonormal basis of span(y); two Cholesky-QR passes, QR fallback."""
    z = y * sqrt_m[:, None]
    try:
        for _ in range(2):
            gram = z.T @ z
            chol = np.linalg.cholesky((gram + gram.T) * 0.5)
            z = sla.solve_triangular(chol, z.T, lower=True, check_finite=False).T
    except np.linalg.LinAlgError:
        z, r = np.linalg.qr(y * sqrt_m[:, None])
        keep = np.abs(np.diag(r)) > 1e-13 * np.abs(np.diag(r)).max()
        z = z[:, keep]
    return z / sqrt_m[:, None]


def _block_pcg(op, precond, rhs, tol=1e-13, max_iter=200):
    """Preconditioned conjugate gradients on all columns of ``rhs`` at once."""
    x = precond(rhs)
    r = rhs - op @ x
    bnorm = np.linalg.norm(rhs, axis=0)
    bnorm[bnorm == 0] = 1.0
    if np.all(np.linalg.norm(r, axis=0) <= tol * bnorm):
        return x
    z = precond(r)
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    for _ in range(max_iter):
        if np.all(np.linalg.norm(r, axis=0) <= tol * bnorm):
            break
        ap = op @ p
        denom = np.einsum("ij,ij->j", p, ap)
        alpha = np.divide(rz, denom, out=np.zeros_like(rz), where=denom != 0)
        x += p * alpha
        r -= ap * alpha
        z = precond(r)
        rz_new = np.einsum("ij,ij->j", r, z)
        beta = np.divide(rz_new, rz, out=np.zeros_like(rz), where=rz != 0)
        p = z + p * beta
        rz = rz_new
    return x


def _preconditioner(shifted, config, near_nullspace):
    """Return ``(kind, apply)`` for the inner solves with ``shifted``."""
    kind = config.preconditioner
    if kind == "auto":
        kind = "ilu" if config.drop_tol > 0 else ("lu" if shifted.shape[0] <= LU_MAX_DIM else "amg")
    if kind == "amg":
        import pyamg

        b = None if near_nullspace is None else np.asarray(near_nullspace, dtype=np.float64)
        if b is not None and b.ndim == 1:
            b = b[:, None]
        # pyamg estimates spectral radii from np.random start vectors; pin them
        state = np.random.get_state()
        np.random.seed(config.seed)
        try:
            ml = pyamg.smoothed_aggregation_solver(shifted.tocsr(), B=b, symmetry="hermitian", max_coarse=500)
        finally:
            np.random.set_state(state)
        cycle = ml.aspreconditioner(cycle="V")
        return kind, lambda r: np.column_stack([cycle @ r[:, j] for j in range(r.shape[1])])
    try:
        if kind == "ilu":
            fac = spla.spilu(shifted.tocsc(), drop_tol=config.drop_tol or 1e-4, fill_factor=20,
                             permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0)
        else:
            fac = spla.splu(shifted.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                            options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise IllPosedError(f"shifted operator is singular: {exc}") from exc
    return kind, fac.solve


def _lanczos_subspace(apply_t, mass, sqrt_m, start, want, tol, max_blocks):
    """Block Lanczos for ``T = (K - shift M)^{-1} M`` with full M-reorthogonalization.

    Returns an M-orthonormal basis whose Ritz vectors for the ``want``
    largest eigenvalues of ``T`` have converged to roughly ``tol``.
    """
    n, b = start.shape
    basis = np.zeros((n, min(n, b * (max_blocks + 1))))
    v = _m_orthonormalize(start, sqrt_m)
    width = v.shape[1]
    basis[:, :width] = v
    used = width
    blocks = [(0, width)]
    tri = np.zeros((0, 0))
    check_every = max(1, want // (4 * b))
    for j in range(max_blocks):
        lo, hi = blocks[-1]
        w = apply_t(basis[:, lo:hi])
        coeff = np.zeros((used, hi - lo))
        for _ in range(2):
            c = basis[:, :used].T @ (w * mass[:, None])
            w -= basis[:, :used] @ c
            coeff += c
        grow = _m_orthonormalize(w, sqrt_m) if used < n else np.zeros((n, 0))
        beta = grow.T @ (w * mass[:, None]) if grow.shape[1] else np.zeros((0, hi - lo))
        # projected operator (symmetric in exact arithmetic)
        new_used = min(used + grow.shape[1], basis.shape[1])
        grow = grow[:, : new_used - used]
        beta = beta[: new_used - used]
        big = np.zeros((new_used, new_used))
        big[: tri.shape[0], : tri.shape[1]] = tri
        big[:used, lo:hi] = coeff
        big[lo:hi, :used] = coeff.T
        big[used:new_used, lo:hi] = beta
        big[lo:hi, used:new_used] = beta.T
        tri_used = big[:used, :used]
        tri = big
        done = new_used == used or new_used >= n
        if (j + 1) % check_every == 0 or done or j == max_blocks - 1:
            mu, s = np.linalg.eigh((tri_used + tri_used.T) * 0.5)
            top = s[:, ::-1][:, :want]
            est = np.linalg.norm(beta @ top[lo:hi, :], axis=0) if beta.size else np.zeros(top.shape[1])
            if used >= want and np.all(est <= tol * np.abs(mu[::-1][:want])):
                return basis[:, :used]
        if done:
            return basis[:, :used]
        basis[:, used:new_used] = grow
        blocks.append((used, new_used))
        used = new_used
    return basis[:, :used]


def solve_lowest(pair: LaplacePair, config: SolverConfig, near_nullspace=None) -> SpectralDecomposition:
    """Lowest generalized eigenpairs by shift-invert block Lanczos plus polishing.

    A block Krylov space of ``T = (K - shift M)^{-1} M`` is grown with full
    M-reorthogonalization; its Ritz vectors then seed a shift-invert
    subspace iteration with Rayleigh-Ritz.  Leading pairs that meet ``tol``
    are locked and the active block is kept M-orthogonal to them.  Inner
    systems are solved by block PCG preconditioned by a sparse LU, an
    incomplete LU or a smoothed-aggregation AMG cycle (``near_nullspace``
    seeds the latter; constant forms are a good choice).
    """
    _check_pair(pair)
    n = pair.dim
    count = config.count
    if count >= n:
        raise IllPosedError(f"count {count} must be smaller than the matrix dimension {n}")
    k = pair.stiffness.tocsr()
    mass = pair.mass
    sqrt_m = np.sqrt(mass)
    shift = _default_shift(pair) if config.shift is None else config.shift
    scale = abs(shift) if shift != 0 else 1e-3 * k.diagonal().sum() / mass.sum()
    guard = max(10, count // 4)
    active = min(count + guard, n - 1)
    width = config.block_size or 16

    shifted = (k - shift * sp.diags(mass)).tocsr()
    if near_nullspace is None and pair.degree == 0:
        near_nullspace = np.ones(n)
    kind, precond = _preconditioner(shifted, config, near_nullspace)

    def apply_t(v):
        return _block_pcg(shifted, precond, v * mass[:, None], max_iter=500)

    rng = np.random.default_rng(config.seed)
    start = rng.uniform(-1.0, 1.0, size=(n, min(width, n)))
    # Krylov basis bounded by both a multiple of the wanted count and memory
    limit = min(n, 8 * active + width, max(2 * active, KRYLOV_MAX_BYTES // (8 * n)))
    max_blocks = max(4, limit // width - 1)
    basis = _lanczos_subspace(apply_t, mass, sqrt_m, start, count, 1e-2 * config.tol, max_blocks)
    a = basis.T @ (k @ basis)
    theta, c = np.linalg.eigh((a + a.T) * 0.5)
    x = basis @ c[:, :active]
    if x.shape[1] < active:
        fill = _m_orthonormalize(rng.uniform(-1.0, 1.0, size=(n, active - x.shape[1])), sqrt_m)
        x = np.hstack([x, fill])

    locked_vecs = np.zeros((n, 0))
    locked_vals = np.zeros(0)
    locked_res = np.zeros(0)
    emergence = np.zeros(0, dtype=np.int64)
    theta = np.zeros(x.shape[1])
    res = np.full(x.shape[1], np.inf)

    for it in range(1, config.max_iter + 1):
        y = apply_t(x)
        if locked_vecs.shape[1]:
            y -= locked_vecs @ (locked_vecs.T @ (y * mass[:, None]))
        q = _m_orthonormalize(y, sqrt_m)
        if locked_vecs.shape[1]:
            q -= locked_vecs @ (locked_vecs.T @ (q * mass[:, None]))
            q = _m_orthonormalize(q, sqrt_m)
        a = q.T @ (k @ q)
        theta, c = np.linalg.eigh((a + a.T) * 0.5)
        x = q @ c
        res = _residuals(k, mass, x, theta, scale)

        need = count - locked_vecs.shape[1]
        conv = res[:need] <= config.tol
        nlock = need if conv.all() else int(np.argmin(conv))
        if nlock:
            locked_vecs = np.hstack([locked_vecs, x[:, :nlock]])
            locked_vals = np.concatenate([locked_vals, theta[:nlock]])
            locked_res = np.concatenate([locked_res, res[:nlock]])
            emergence = np.concatenate([emergence, np.full(nlock, it)])
            x, theta, res = x[:, nlock:], theta[nlock:], res[nlock:]
        if locked_vecs.shape[1] >= count:
            break
    else:
        need = count - locked_vecs.shape[1]
        vecs = np.hstack([locked_vecs, x[:, :need]])
        vals = np.concatenate([locked_vals, theta[:need]])
        residuals = np.concatenate([locked_res, res[:need]])
        partial = _package(pair, vals, vecs, residuals, config, "lanczos", emergence, scale)
        worst = float(residuals.max())
        raise ConvergenceError(
            f"no convergence after {config.max_iter} iterations (worst residual {worst:.3e})",
            partial, worst,
        )
    return _package(pair, locked_vals, locked_vecs, locked_res, config, "lanczos", emergence, scale,
                    iterations=it, krylov_dim=basis.shape[1], shift=shift, preconditioner=kind)


def _package(pair, vals, vecs, residuals, config, method, emergence, scale, **info):
    # locked pairs can arrive slightly out of order; sort, keeping the record
    order = np.argsort(vals, kind="stable")
    vals = _finalize_values(vals[order], scale)
    cfg = config.to_dict() if isinstance(config, SolverConfig) else dict(config)
    info = {k: (float(v) if isinstance(v, (np.floating, float)) else v) for k, v in info.items()}
    info["residual_scale"] = float(scale)
    info["scheme"] = pair.scheme
    info["order"] = order.tolist() if np.any(order != np.arange(len(order))) else []
    return SpectralDecomposition(
        degree=pair.degree,
        eigenvalues=vals,
        eigenvectors=np.ascontiguousarray(vecs[:, order]),
        residuals=np.asarray(residuals)[order],
        config=cfg,
        method=method,
        emergence=np.asarray(emergence, dtype=np.int64)[order] if len(emergence) else np.zeros(len(vals), dtype=np.int64),
        info=info,
    )


def solve_all_dense(pair: LaplacePair) -> SpectralDecomposition:
    """Full spectrum via ``eigh`` of ``M^{-1/2} K M^{-1/2}``."""
    _check_pair(pair)
    n = pair.dim
    if n > DENSE_MAX_DIM:
        raise IllPosedError(f"dense solve capped at dimension {DENSE_MAX_DIM}, got {n}")
    inv_sqrt = 1.0 / np.sqrt(pair.mass)
    a = pair.stiffness.toarray() * inv_sqrt[:, None] * inv_sqrt[None, :]
    vals, vecs = np.linalg.eigh((a + a.T) * 0.5)
    vecs = vecs * inv_sqrt[:, None]
    scale = abs(_default_shift(pair))
    res = _residuals(pair.stiffness, pair.mass, vecs, vals, scale)
    return _package(pair, vals, vecs, res, {"count": n, "method": "dense"}, "dense",
                    np.zeros(n, dtype=np.int64), scale)


def kernel_gap(decomposition: SpectralDecomposition) -> tuple[int, float]:
    """Split point and ratio of the largest relative gap near zero."""
    vals = np.abs(decomposition.eigenvalues)
    if vals.size == 0:
        raise NoSpectralGapError("empty decomposition")
    cutoff = 1e-3 * vals.max()
    small = np.flatnonzero(vals < cutoff)
    if small.size == 0:
        return 0, float("inf")
    last = int(small.max())
    if last + 1 >= vals.size:
        raise NoSpectralGapError("all computed eigenvalues look like zero modes; request more eigenpairs")
    idx = np.arange(last + 1)
    # computed zero modes are only zero up to rounding
    floor = 1e-12 * max(vals.max(), decomposition.info.get("residual_scale", 0.0))
    ratios = np.maximum(vals[idx + 1], floor) / np.maximum(vals[idx], floor)
    best = int(np.argmax(ratios))
    return best + 1, float(ratios[best])


def kernel_dimension(decomposition: SpectralDecomposition, strategy: str = "gap",
                     threshold: float | None = None, min_ratio: float = 1e3) -> int:
    """Number of zero eigenvalues, i.e. the Betti number of the degree."""
    if strategy == "absolute":
        if threshold is None:
            raise ValueError("absolute strategy needs a threshold")
        return int(np.sum(np.abs(decomposition.eigenvalues) < threshold))
    if strategy != "gap":
        raise ValueError(f"unknown strategy {strategy!r}")
    dim, ratio = kernel_gap(decomposition)
    if ratio < min_ratio:
        raise NoSpectralGapError(
            f"no discernible spectral gap (best ratio {ratio:.3g} < {min_ratio:g}); "
            "request more eigenpairs or a tighter tolerance"
        )
    return dim


# --------------------------------------------------------------------------
# file format: JSON header + raw little-endian float64 column-major block


def save_decomposition(decomposition: SpectralDecomposition, path, extra: dict | None = None) -> Path:
    path = Path(path)
    bin_path = path.with_suffix(".bin")
    header = {
        "degree": decomposition.degree,
        "dim": decomposition.dim,
        "count": decomposition.count,
        "method": decomposition.method,
        "eigenvalues": decomposition.eigenvalues.tolist(),
        "residuals": decomposition.residuals.tolist(),
        "emergence": decomposition.emergence.tolist(),
        "config": decomposition.config,
        "info": decomposition.info,
        "vectors_file": bin_path.name,
    }
    if extra:
        header.update(extra)
    tmp_bin = bin_path.with_name(bin_path.name + ".tmp")
    tmp_bin.write_bytes(np.asarray(decomposition.eigenvectors, dtype="<f8").tobytes(order="F"))
    tmp_bin.replace(bin_path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(header, indent=1, sort_keys=True))
    tmp.replace(path)
    return path


def load_decomposition(path) -> tuple[SpectralDecomposition, dict]:
    path = Path(path)
    header = json.loads(path.read_text())
    raw = np.frombuffer((path.parent / header["vectors_file"]).read_bytes(), dtype="<f8")
    vecs = raw.reshape((header["dim"], header["count"]), order="F").astype(np.float64)
    dec = SpectralDecomposition(
        degree=header["degree"],
        eigenvalues=np.asarray(header["eigenvalues"], dtype=np.float64),
        eigenvectors=vecs,
        residuals=np.asarray(header["residuals"], dtype=np.float64),
        config=header["config"],
        method=header["method"],
        emergence=np.asarray(header.get("emergence", []), dtype=np.int64),
        info=header.get("info", {}),
    )
    return dec, header
