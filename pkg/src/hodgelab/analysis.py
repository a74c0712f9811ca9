"""Numerical checks of eigenvalue and eigenform estimates on DEC meshes.

Every check consumes a :class:`~hodgelab.eigen.SpectralDecomposition`
together with the complex it was computed on and produces a
:class:`ClaimReport` (or a fit) that serializes to JSON, aligned text and
CSV. Randomized checks take an explicit seed.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .complex import SimplicialComplex
from .dec import hodge_laplacian, near_nullspace, pointwise_value_norm, vertex_form_components, vertex_gradients
from .eigen import SolverConfig, SpectralDecomposition, _block_pcg, kernel_dimension, solve_lowest

__all__ = [
    "CLAIMS",
    "ExponentFit",
    "ClaimReport",
    "SpectralFunctionField",
    "HeatKernelEvaluator",
    "SobolevReport",
    "TailBoundError",
    "UnsupportedDimensionError",
    "fit_exponent",
    "default_fit_range",
    "spectral_function",
    "verify_weyl",
    "verify_gradient_lemma",
    "verify_sharpness",
    "verify_supnorm",
    "verify_intertwining",
    "build_heat_evaluator",
    "heat_kernel",
    "heat_kernel_matrix",
    "verify_heat_decay",
    "verify_semigroup",
    "sobolev_ratio",
    "verify_sobolev",
]

# report identifiers, one per checked estimate
CLAIMS = {
    "weyl": "weyl-lower-bound",
    "sharpness": "gradient-bound-sharpness",
    "lemma": "gradient-lemma",
    "supnorm": "supnorm-envelope",
    "heat_decay": "heat-kernel-decay",
    "semigroup": "heat-semigroup",
    "sobolev": "sobolev-inequality",
    "intertwining": "intertwining",
}

MIN_FIT_POINTS = 8


class TailBoundError(ValueError):
    """Truncated spectral sum is not accurate enough for the request."""


class UnsupportedDimensionError(ValueError):
    pass


def _plain(value):
    """Convert numpy scalars/arrays to JSON-ready Python objects."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return float(value)
    return value


# --------------------------------------------------------------------------
# exponent fits


@dataclass(frozen=True, eq=False)
class ExponentFit:
    """Least-squares line through ``(log x, log y)``.

    ``xs``/``ys`` keep all supplied points; ``index_range`` is the
    half-open slice actually fitted.
    """

    slope: float
    intercept: float
    r_squared: float
    index_range: tuple[int, int]
    xs: np.ndarray
    ys: np.ndarray
    expected: float | None = None
    label: str = ""

    @property
    def npoints(self) -> int:
        lo, hi = self.index_range
        return hi - lo

    def to_dict(self) -> dict:
        return _plain({
            "label": self.label,
            "slope": self.slope,
            "intercept": self.intercept,
            "r_squared": self.r_squared,
            "expected": self.expected,
            "index_range": list(self.index_range),
            "x": self.xs,
            "y": self.ys,
        })

    def to_csv(self, claim: str = "") -> str:
        lines = [f"# claim={claim} fit={self.label} expected_exponent={self.expected}"]
        lines.append("x,y")
        lo, hi = self.index_range
        lines.extend(f"{x!r},{y!r}" for x, y in zip(self.xs[lo:hi].tolist(), self.ys[lo:hi].tolist()))
        return "\n".join(lines) + "\n"


def fit_exponent(xs, ys, index_range: tuple[int, int] | None = None, expected: float | None = None,
                 label: str = "") -> ExponentFit:
    """Fit ``log y = slope * log x + intercept`` by ordinary least squares.

    Parameters
    ----------
    xs, ys : array_like
        Positive data of equal length.
    index_range : (lo, hi), optional
        Half-open slice of the data to fit; all points by default.

    Raises
    ------
    ValueError
        On nonpositive data in the range or fewer than 8 points.

    Examples
    --------
    >>> fit = fit_exponent(np.arange(1, 11.0), 5 * np.arange(1, 11.0) ** 2)
    >>> round(fit.slope, 12), round(math.exp(fit.intercept), 12)
    (2.0, 5.0)
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-D arrays of equal length")
    lo, hi = (0, len(xs)) if index_range is None else (int(index_range[0]), int(index_range[1]))
    lo, hi = max(lo, 0), min(hi, len(xs))
    if hi - lo < MIN_FIT_POINTS:
        raise ValueError(f"need at least {MIN_FIT_POINTS} points to fit, got {max(hi - lo, 0)}")
    x, y = xs[lo:hi], ys[lo:hi]
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise ValueError("exponent fits need strictly positive data")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) == 0:
        raise ValueError("all x values coincide")
    res = scipy.stats.linregress(lx, ly)
    r2 = float(np.clip(res.rvalue**2, 0.0, 1.0)) if np.ptp(ly) > 0 else 1.0
    return ExponentFit(float(res.slope), float(res.intercept), r2, (lo, hi), xs, ys, expected, label)


def default_fit_range(npoints: int) -> tuple[int, int]:
    """Upper two-thirds of a spectrum with the top 10% dropped."""
    return npoints // 3, int(math.floor(0.9 * npoints))


# --------------------------------------------------------------------------
# reports


@dataclass(eq=False)
class ClaimReport:
    """Outcome of one verification with scalar metrics and fits."""

    claim: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    fits: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _plain({
            "claim": self.claim,
            "passed": self.passed,
            "metrics": self.metrics,
            "fits": {name: fit.to_dict() for name, fit in self.fits.items()},
            "notes": list(self.notes),
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    def to_text(self) -> str:
        rows = [("claim", self.claim), ("result", "PASS" if self.passed else "FAIL")]
        for key in sorted(self.metrics):
            rows.append((key, _fmt(self.metrics[key])))
        for name in sorted(self.fits):
            fit = self.fits[name]
            rows.append((f"fit[{name}].slope", f"{fit.slope:.6g}"))
            rows.append((f"fit[{name}].expected", _fmt(fit.expected)))
            rows.append((f"fit[{name}].r_squared", f"{fit.r_squared:.6g}"))
            rows.append((f"fit[{name}].points", str(fit.npoints)))
        width = max(len(k) for k, _ in rows)
        lines = [f"{k.ljust(width)}  {v}" for k, v in rows]
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        return "".join(fit.to_csv(self.claim) for _, fit in sorted(self.fits.items()))


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return f"{value:.6g}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(v) for v in value) + "]"
    return str(value)


# --------------------------------------------------------------------------
# spectral function


@dataclass(frozen=True, eq=False)
class SpectralFunctionField:
    """Per-vertex ``Q_A(x) = max_{|b|=1} (|grad w_b|^2 + A |w_b|^2)(x)``.

    With ``gradient=False`` the field is ``max_{|b|=1} w_b(x)^2``.
    """

    values: np.ndarray
    A: float
    k: int
    gradient: bool = True


def _check_cutoff(decomposition: SpectralDecomposition, k: int) -> None:
    if decomposition.degree != 0:
        raise ValueError("spectral function is defined for scalar (p = 0) decompositions")
    if not 1 <= k <= decomposition.count:
        raise ValueError(f"cutoff k={k} outside 1..{decomposition.count}")


class _GramSums:
    """Cumulative per-vertex sums over modes ``i <= k``.

    Stores ``sum grad grad^T``, ``sum phi grad`` and ``sum phi^2`` so that
    the Gram matrix of rows ``[grad phi_i, sqrt(A) phi_i]`` can be formed
    for any ``A`` without touching the modes again.
    """

    def __init__(self, complex: SimplicialComplex, phi: np.ndarray):
        grads = vertex_gradients(complex, phi)  # (V, D, k)
        self.gg = np.cumsum(np.einsum("vak,vbk->kvab", grads, grads), axis=0)
        self.gp = np.cumsum(np.einsum("vak,vk->kva", grads, phi), axis=0)
        self.pp = np.cumsum((phi**2).T, axis=0)

    def q(self, k: int, A: float) -> np.ndarray:
        """Largest eigenvalue of the ``(D+1) x (D+1)`` Gram matrix at each vertex."""
        gg, gp, pp = self.gg[k - 1], self.gp[k - 1], self.pp[k - 1]
        nv, d, _ = gg.shape
        g = np.empty((nv, d + 1, d + 1))
        g[:, :d, :d] = gg
        g[:, :d, d] = math.sqrt(A) * gp
        g[:, d, :d] = math.sqrt(A) * gp
        g[:, d, d] = A * pp
        return np.linalg.eigvalsh(g)[:, -1]


def spectral_function(decomposition: SpectralDecomposition, complex: SimplicialComplex, k: int,
                      A: float, gradient: bool = True) -> SpectralFunctionField:
    """Maximize ``|grad w|^2 + A w^2`` over unit combinations of the first ``k`` modes.

    At a vertex ``x`` let ``W(x)`` be the ``k x (D+1)`` matrix with rows
    ``[grad phi_i(x), sqrt(A) phi_i(x)]``. The maximum over unit ``b`` of
    ``|W(x)^T b|^2`` is the top eigenvalue of ``W^T W``, which is only
    ``(D+1) x (D+1)``.
    """
    _check_cutoff(decomposition, k)
    if A < 0:
        raise ValueError("A must be nonnegative")
    phi = decomposition.eigenvectors[:, :k]
    if not gradient:
        return SpectralFunctionField(np.sum(phi**2, axis=1), float(A), k, False)
    return SpectralFunctionField(_GramSums(complex, phi).q(k, A), float(A), k, True)


def extremal_coefficients(decomposition: SpectralDecomposition, complex: SimplicialComplex, k: int,
                          A: float, vertices=None) -> np.ndarray:
    """Unit coefficient vectors attaining :func:`spectral_function` at each vertex.

    Returns an array of shape ``(k, len(vertices))``.
    """
    _check_cutoff(decomposition, k)
    phi = decomposition.eigenvectors[:, :k]
    grads = vertex_gradients(complex, phi)
    if vertices is not None:
        vertices = np.asarray(vertices)
        phi, grads = phi[vertices], grads[vertices]
    w = np.concatenate([grads, math.sqrt(A) * phi[:, None, :]], axis=1)  # (V, D+1, k)
    _, vecs = np.linalg.eigh(np.einsum("vak,vbk->vab", w, w))
    top = vecs[:, :, -1]
    b = np.einsum("vak,va->kv", w, top)
    return b / np.linalg.norm(b, axis=0)


# --------------------------------------------------------------------------
# eigenvalue growth and pointwise bounds


def verify_weyl(decomposition: SpectralDecomposition, betti: int, n: int,
                k_range: tuple[int, int] | None = None, tol: float = 0.1) -> ClaimReport:
    """Fit ``lambda_k`` against ``k - b_p`` and compare the slope with ``2/n``.

    Parameters
    ----------
    betti : int
        Number of zero modes ``b_p``; indices ``k <= b_p`` are skipped.
    n : int
        Manifold dimension.
    k_range : (k_lo, k_hi), optional
        Inclusive 1-based index range. Defaults to the upper two-thirds of
        the nonzero spectrum without its top 10%.

    The report carries the empirical constant ``c_inv = min lambda_k /
    (k - b_p)^(2/n)`` over the fitted range.
    """
    count = decomposition.count
    if not 0 <= betti < count:
        raise ValueError(f"betti={betti} incompatible with {count} eigenpairs")
    ks = np.arange(betti + 1, count + 1)
    lam = decomposition.eigenvalues[betti:]
    if k_range is None:
        lo, hi = default_fit_range(len(ks))
    else:
        if k_range[0] <= betti or k_range[1] > count:
            raise ValueError(f"k_range {k_range} must lie in {betti + 1}..{count}")
        lo, hi = k_range[0] - betti - 1, k_range[1] - betti
    expected = 2.0 / n
    fit = fit_exponent(ks - betti, lam, (lo, hi), expected, "lambda_k vs k-b")
    sel = slice(lo, hi)
    c_inv = float(np.min(lam[sel] / (ks[sel] - betti) ** expected))
    passed = abs(fit.slope - expected) <= tol and c_inv > 0
    metrics = {
        "degree": decomposition.degree,
        "n": n,
        "betti": betti,
        "k_range": [int(ks[lo]), int(ks[hi - 1])],
        "slope": fit.slope,
        "expected_slope": expected,
        "tolerance": tol,
        "c_inv": c_inv,
    }
    return ClaimReport(CLAIMS["weyl"], passed, metrics, {"weyl": fit})


def verify_sharpness(decomposition: SpectralDecomposition, complex: SimplicialComplex,
                     cutoffs, tol: float = 0.15) -> ClaimReport:
    """Growth of ``max_x Q_{lambda_k+1}`` in ``lambda_k + 1``.

    The full field should grow with exponent ``n/2 + 1`` and the
    gradient-free field ``max_x sum_i phi_i(x)^2`` with exponent ``n/2``.
    """
    cutoffs = np.asarray(sorted(set(int(k) for k in cutoffs)))
    if cutoffs.size == 0:
        raise ValueError("no cutoffs given")
    _check_cutoff(decomposition, int(cutoffs.max()))
    _check_cutoff(decomposition, int(cutoffs.min()))
    n = complex.dim
    phi = decomposition.eigenvectors[:, : cutoffs.max()]
    sums = _GramSums(complex, phi)
    lam = decomposition.eigenvalues
    xs = lam[cutoffs - 1] + 1.0
    full = np.array([sums.q(k, a).max() for k, a in zip(cutoffs, xs)])
    free = sums.pp[cutoffs - 1].max(axis=1)
    fit_full = fit_exponent(xs, full, expected=n / 2 + 1, label="max Q vs lambda_k+1")
    fit_free = fit_exponent(xs, free, expected=n / 2, label="max sum phi^2 vs lambda_k+1")
    passed = abs(fit_full.slope - (n / 2 + 1)) <= tol and abs(fit_free.slope - n / 2) <= tol
    metrics = {
        "n": n,
        "cutoffs": [int(cutoffs[0]), int(cutoffs[-1])],
        "points": int(cutoffs.size),
        "slope_full": fit_full.slope,
        "slope_gradient_free": fit_free.slope,
        "tolerance": tol,
    }
    return ClaimReport(CLAIMS["sharpness"], passed, metrics, {"full": fit_full, "gradient_free": fit_free})


def _upper_envelope(values: np.ndarray) -> np.ndarray:
    return np.maximum.accumulate(values)


def verify_supnorm(decomposition: SpectralDecomposition, complex: SimplicialComplex,
                   betti: int | None = None, index_range: tuple[int, int] | None = None,
                   tol: float = 0.1) -> ClaimReport:
    """Envelope growth of ``max|phi_k|`` and ``max|grad phi_k|`` against ``lambda_k``.

    Both sequences are replaced by their running maxima before fitting, so
    the slopes bound the growth from above. Passing requires slopes at most
    ``n/4 + tol`` and ``(n+2)/4 + tol``.
    """
    if decomposition.degree != 0:
        raise ValueError("sup-norm envelopes are defined for p = 0")
    n = complex.dim
    b = kernel_dimension(decomposition) if betti is None else betti
    phi = decomposition.eigenvectors[:, b:]
    lam = decomposition.eigenvalues[b:]
    sup = np.abs(phi).max(axis=0)
    gsup = np.linalg.norm(vertex_gradients(complex, phi), axis=1).max(axis=0)
    rng = default_fit_range(len(lam)) if index_range is None else index_range
    fit_v = fit_exponent(lam, _upper_envelope(sup), rng, n / 4, "envelope max|phi| vs lambda")
    fit_g = fit_exponent(lam, _upper_envelope(gsup), rng, (n + 2) / 4, "envelope max|grad phi| vs lambda")
    passed = fit_v.slope <= n / 4 + tol and fit_g.slope <= (n + 2) / 4 + tol
    metrics = {
        "n": n,
        "betti": b,
        "slope_value": fit_v.slope,
        "bound_value": n / 4 + tol,
        "slope_gradient": fit_g.slope,
        "bound_gradient": (n + 2) / 4 + tol,
        "sup_constant_value": float(np.max(sup / lam ** (n / 4))),
        "sup_constant_gradient": float(np.max(gsup / lam ** ((n + 2) / 4))),
    }
    return ClaimReport(CLAIMS["supnorm"], passed, metrics, {"value": fit_v, "gradient": fit_g})


def _lemma_ratios(phi, grads, coeffs, A, chunk=256):
    out = np.empty(coeffs.shape[1])
    for s in range(0, coeffs.shape[1], chunk):
        c = coeffs[:, s:s + chunk]
        u = phi @ c
        g = np.einsum("vdk,kc->vdc", grads, c, optimize=True)
        top = (np.einsum("vdc,vdc->vc", g, g) + A * u**2).max(axis=0)
        out[s:s + chunk] = top / (A * (u**2).max(axis=0))
    return out


def verify_gradient_lemma(decomposition: SpectralDecomposition, complex: SimplicialComplex, k: int,
                          trials: int = 100, seed: int = 0, tol_disc: float = 0.05,
                          extremizers: bool = True) -> ClaimReport:
    """Check ``max(|grad u|^2 + A u^2) <= A max u^2`` for ``u`` in the span of the first ``k`` modes.

    Here ``A = lambda_k + (n-1) K`` with ``K`` the curvature bound of the
    mesh metadata. Test functions are ``trials`` seeded random unit
    combinations plus, when ``extremizers`` is set, the pointwise
    maximizer of :func:`spectral_function` at every vertex.
    """
    _check_cutoff(decomposition, k)
    if trials < 1:
        raise ValueError("trials must be positive")
    n = complex.dim
    curv = complex.metadata.curvature_bound
    A = float(decomposition.eigenvalues[k - 1] + (n - 1) * curv)
    if A <= 0:
        raise ValueError("A = lambda_k + (n-1)K must be positive; choose k beyond the zero modes")
    phi = decomposition.eigenvectors[:, :k]
    grads = vertex_gradients(complex, phi)
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((k, trials))
    b /= np.linalg.norm(b, axis=0)
    rho_rand = _lemma_ratios(phi, grads, b, A)
    metrics = {"k": k, "A": A, "trials": trials, "seed": seed, "tol_disc": tol_disc,
               "max_rho_random": float(rho_rand.max())}
    worst = float(rho_rand.max())
    if extremizers:
        ext = extremal_coefficients(decomposition, complex, k, A)
        rho_ext = _lemma_ratios(phi, grads, ext, A)
        metrics["max_rho_extremizer"] = float(rho_ext.max())
        metrics["extremizer_vertex"] = int(np.argmax(rho_ext))
        worst = max(worst, float(rho_ext.max()))
    metrics["max_rho"] = worst
    return ClaimReport(CLAIMS["lemma"], worst <= 1 + tol_disc, metrics)


def verify_intertwining(decomposition: SpectralDecomposition, complex: SimplicialComplex,
                        solver_tol: float | None = None, factor: float = 10.0) -> ClaimReport:
    """Check that ``d x`` is a 1-form eigencochain for every scalar eigenpair ``(lam, x)``.

    Measures ``|K_1 d x - lam M_1 d x|_{M_1^-1} / |d x|_{M_1}`` and passes
    when it stays below ``factor * solver_tol`` for all nonconstant modes.
    """
    from .dec import coboundary

    if decomposition.degree != 0:
        raise ValueError("intertwining starts from a scalar decomposition")
    scheme = decomposition.info.get("scheme", "auto")
    tol = decomposition.config.get("tol", 1e-8) if solver_tol is None else solver_tol
    pair = hodge_laplacian(complex, 1, scheme)
    y = coboundary(complex, 0).matrix @ decomposition.eigenvectors
    lam = decomposition.eigenvalues
    r = pair.stiffness @ y - pair.mass[:, None] * y * lam[None, :]
    rnorm = np.sqrt(np.einsum("ij,ij->j", r, r / pair.mass[:, None]))
    ynorm = np.sqrt(np.einsum("ij,ij->j", y, y * pair.mass[:, None]))
    live = ynorm > 1e-8 * ynorm.max()
    rel = rnorm[live] / ynorm[live]
    worst = float(rel.max()) if rel.size else 0.0
    metrics = {"modes": int(live.sum()), "max_relative_residual": worst, "solver_tol": tol,
               "bound": factor * tol, "scheme": pair.scheme}
    return ClaimReport(CLAIMS["intertwining"], worst <= factor * tol, metrics)


# --------------------------------------------------------------------------
# heat kernel


@dataclass(frozen=True, eq=False)
class HeatKernelEvaluator:
    """Truncated spectral heat kernel with a tail estimate.

    The tail of the sum beyond the computed modes is bounded by
    ``sum_{k > count} sup_constant * f(L_k)`` where ``f(lam) = exp(-lam t)
    lam^(n/2)`` (maximized over ``lam >= L_k``) and ``L_k = max(lambda_count,
    c_inv (k - b_p)^(2/n))`` is the fitted Weyl envelope. Both constants come
    from the same decomposition, so the bound is self-consistent rather
    than a certified one.
    """

    decomposition: SpectralDecomposition
    complex: SimplicialComplex
    degree: int
    volume: float
    betti: int
    c_inv: float
    sup_constant: float
    values: np.ndarray  # (V, C, count) pointwise components at vertices

    @property
    def n(self) -> int:
        return self.complex.dim

    def tail_bound(self, t: float) -> float:
        if not t > 0:
            raise ValueError(f"t must be positive, got {t}")
        n = self.n
        lam_last = float(self.decomposition.eigenvalues[-1])
        peak = n / (2 * t)
        total = 0.0
        start = self.decomposition.count + 1
        chunk = 1 << 16
        for _ in range(4096):
            k = np.arange(start, start + chunk, dtype=float)
            env = np.maximum(lam_last, self.c_inv * (k - self.betti) ** (2.0 / n))
            lam = np.maximum(env, peak)
            terms = np.exp(-lam * t + (n / 2) * np.log(lam))
            total += float(terms.sum())
            if env[-1] > peak and terms[-1] <= 1e-18 * max(total, 1e-300):
                return self.sup_constant * total
            start += chunk
        return math.inf

    def diagonal_deviation(self, t: float) -> np.ndarray:
        """``H(x,x,t)`` minus the harmonic part at every vertex (trace for forms)."""
        w = np.exp(-self.decomposition.eigenvalues[self.betti:] * t)
        v = self.values[:, :, self.betti:]
        return np.einsum("vck,k->v", v**2, w)


def build_heat_evaluator(decomposition: SpectralDecomposition, complex: SimplicialComplex,
                         betti: int | None = None, k_range: tuple[int, int] | None = None
                         ) -> HeatKernelEvaluator:
    """Attach pointwise mode values, a Weyl envelope and a sup constant."""
    p = decomposition.degree
    b = kernel_dimension(decomposition) if betti is None else betti
    n = complex.dim
    weyl = verify_weyl(decomposition, b, n, k_range)
    phi = decomposition.eigenvectors
    if p == 0:
        values = phi[:, None, :]
    else:
        values = vertex_form_components(complex, p, phi)
    sq = np.sum(values**2, axis=1).max(axis=0)[b:]
    lam = decomposition.eigenvalues[b:]
    sup_constant = float(np.max(sq / lam ** (n / 2)))
    volume = float(hodge_laplacian(complex, 0, decomposition.info.get("scheme", "auto")).mass.sum())
    return HeatKernelEvaluator(decomposition, complex, p, volume, b, weyl.metrics["c_inv"], sup_constant, values)


def heat_kernel(evaluator: HeatKernelEvaluator, x: int, y: int, t: float, accuracy: float | None = None):
    """Spectral heat kernel between vertices ``x`` and ``y``.

    For ``p = 0`` returns ``1/V + sum_k exp(-lambda_k t) phi_k(x) phi_k(y)``
    over the nonconstant modes. For ``p >= 1`` returns the ``C x C`` block
    with the harmonic projector removed.

    Raises
    ------
    TailBoundError
        If ``accuracy`` is given and the tail bound exceeds it.
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if accuracy is not None:
        tail = evaluator.tail_bound(t)
        if tail > accuracy:
            raise TailBoundError(
                f"tail bound {tail:.3e} exceeds requested accuracy {accuracy:.3e}; "
                "compute more eigenpairs or use a larger t"
            )
    b = evaluator.betti
    w = np.exp(-evaluator.decomposition.eigenvalues[b:] * t)
    vx = evaluator.values[x, :, b:]
    vy = evaluator.values[y, :, b:]
    # elementwise products first so that swapping x and y is bitwise symmetric
    block = (vx[:, None, :] * vy[None, :, :]) @ w
    if evaluator.degree == 0:
        return float(block[0, 0] + 1.0 / evaluator.volume)
    return block


def heat_kernel_matrix(decomposition: SpectralDecomposition, t: float) -> np.ndarray:
    """Kernel matrix ``Phi exp(-Lambda t) Phi^T`` over all supplied modes.

    With the full spectrum and ``t = 0`` this is ``M^-1``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    phi = decomposition.eigenvectors
    return (phi * np.exp(-decomposition.eigenvalues * t)) @ phi.T


def verify_heat_decay(evaluator: HeatKernelEvaluator, ts, tol: float = 0.15,
                      tail_fraction: float = 0.01) -> ClaimReport:
    """Fit ``max_x |H(x,x,t) - harmonic part|`` against ``t``; expect slope ``-n/2``.

    Off-diagonal values are dominated by the diagonal through the
    Cauchy-Schwarz inequality on the spectral sum, so the diagonal sup is
    enough.

    Raises
    ------
    TailBoundError
        If at some ``t`` the tail bound exceeds ``tail_fraction`` of the
        computed deviation.
    """
    ts = np.asarray(ts, dtype=float)
    if np.any(ts <= 0):
        raise ValueError("times must be positive")
    dev = np.array([evaluator.diagonal_deviation(t).max() for t in ts])
    tails = np.array([evaluator.tail_bound(t) for t in ts])
    bad = np.flatnonzero(tails > tail_fraction * dev)
    if bad.size:
        i = int(bad[0])
        raise TailBoundError(
            f"tail bound {tails[i]:.3e} exceeds {tail_fraction:g} of the deviation {dev[i]:.3e} "
            f"at t={ts[i]:g}; compute more eigenpairs or use larger times"
        )
    n = evaluator.n
    fit = fit_exponent(ts, dev, expected=-n / 2, label="max_x deviation vs t")
    passed = abs(fit.slope + n / 2) <= tol
    metrics = {
        "degree": evaluator.degree,
        "n": n,
        "count": evaluator.decomposition.count,
        "t_range": [float(ts.min()), float(ts.max())],
        "slope": fit.slope,
        "expected_slope": -n / 2,
        "tolerance": tol,
        "max_tail_fraction": float(np.max(tails / dev)),
        "c_inv": evaluator.c_inv,
        "sup_constant": evaluator.sup_constant,
    }
    notes = ["tail bound uses empirical Weyl and sup-norm constants from the same run"]
    return ClaimReport(CLAIMS["heat_decay"], passed, metrics, {"decay": fit}, notes)


def verify_semigroup(decomposition: SpectralDecomposition, complex: SimplicialComplex,
                     t: float, s: float) -> float:
    """``max |H(t+s) - H(t) M H(s)|`` for a full (dense) decomposition."""
    if decomposition.count != decomposition.dim:
        raise ValueError(
            f"semigroup check needs the full spectrum ({decomposition.count} of {decomposition.dim} modes)"
        )
    if t < 0 or s < 0:
        raise ValueError("times must be nonnegative")
    mass = hodge_laplacian(complex, decomposition.degree, decomposition.info.get("scheme", "auto")).mass
    lhs = heat_kernel_matrix(decomposition, t + s)
    rhs = heat_kernel_matrix(decomposition, t) @ (mass[:, None] * heat_kernel_matrix(decomposition, s))
    return float(np.abs(lhs - rhs).max())


# --------------------------------------------------------------------------
# Sobolev inequality


@dataclass(frozen=True, eq=False)
class SobolevReport:
    """Largest observed ratio ``|f - P f|_q^2 / energy(f)`` with ``q = 2n/(n-2)``."""

    n: int
    degree: int
    exponent: float
    constant: float
    trials: int
    ratios: np.ndarray
    seed: int

    @property
    def holds(self) -> bool:
        return bool(np.all(self.ratios <= self.constant))

    def to_report(self) -> ClaimReport:
        metrics = {
            "n": self.n,
            "degree": self.degree,
            "exponent": self.exponent,
            "constant": self.constant,
            "trials": self.trials,
            "seed": self.seed,
            "median_ratio": float(np.median(self.ratios)),
            "holds": self.holds,
        }
        return ClaimReport(CLAIMS["sobolev"], self.holds and self.constant > 0, metrics)


def _lq_norm_sq(values: np.ndarray, weights: np.ndarray, q: float) -> np.ndarray:
    return np.einsum("v,vk->k", weights, np.abs(values) ** q) ** (2.0 / q)


def sobolev_ratio(complex: SimplicialComplex, decomposition: SpectralDecomposition, cochains,
                  kernel: int | None = None) -> np.ndarray:
    """Ratios ``|w - P w|^2_{L^q} / (w^T K w)`` for cochain columns.

    ``P`` projects onto the first ``kernel`` eigencochains (the harmonic
    ones). Columns whose energy vanishes are returned as ``nan``.
    """
    n = complex.dim
    if n < 3:
        raise UnsupportedDimensionError(
            f"the Sobolev exponent 2n/(n-2) is infinite or undefined for n={n}; need n >= 3"
        )
    p = decomposition.degree
    scheme = decomposition.info.get("scheme", "auto")
    pair = hodge_laplacian(complex, p, scheme)
    w0 = hodge_laplacian(complex, 0, scheme).mass
    b = kernel_dimension(decomposition) if kernel is None else kernel
    f = np.array(cochains, dtype=float, copy=True)
    single = f.ndim == 1
    if single:
        f = f[:, None]
    harm = decomposition.eigenvectors[:, :b]
    size = np.einsum("ik,ik->k", f, pair.mass[:, None] * f)
    f -= harm @ (harm.T @ (pair.mass[:, None] * f))
    # columns that were (numerically) harmonic are null test functions
    null = np.einsum("ik,ik->k", f, pair.mass[:, None] * f) <= 1e-20 * size
    energy = np.einsum("ik,ik->k", f, pair.stiffness @ f)
    q = 2.0 * n / (n - 2)
    vals = f if p == 0 else pointwise_value_norm(complex, p, f)
    lhs = _lq_norm_sq(vals, w0, q)
    scale = np.abs(energy).max() if energy.size else 0.0
    live = ~null & (energy > 1e-14 * max(scale, 1e-300))
    out = np.where(live, lhs / np.where(energy > 0, energy, 1.0), np.nan)
    return out[0] if single else out


def verify_sobolev(complex: SimplicialComplex, trials: int = 1000, seed: int = 0, degree: int = 0,
                   decomposition: SpectralDecomposition | None = None, band: int = 50) -> SobolevReport:
    """Estimate the Sobolev constant from seeded random test cochains.

    Half of the trials are random combinations of the first ``band``
    non-harmonic eigencochains; the rest are Gaussian noise smoothed once
    by ``(M + h K) f = M r`` with ``h`` the mean edge length. The harmonic
    projection is removed before measuring.
    """
    n = complex.dim
    if n < 3:
        raise UnsupportedDimensionError(
            f"the Sobolev exponent 2n/(n-2) is infinite or undefined for n={n}; need n >= 3"
        )
    if trials < 100:
        raise ValueError("at least 100 trials are required")
    pair = hodge_laplacian(complex, degree, "auto" if decomposition is None else
                           decomposition.info.get("scheme", "auto"))
    if decomposition is None:
        guard = math.comb(n, degree) if degree else 1
        decomposition = solve_lowest(pair, SolverConfig(band + guard + 5, seed=seed),
                                     near_nullspace(complex, degree))
    if decomposition.degree != degree:
        raise ValueError("decomposition degree does not match")
    b = kernel_dimension(decomposition)
    if decomposition.count < b + band:
        raise ValueError(f"decomposition holds {decomposition.count} modes, need {b + band}")
    rng = np.random.default_rng(seed)
    n_band = trials // 2
    coeffs = rng.standard_normal((band, n_band))
    f_band = decomposition.eigenvectors[:, b:b + band] @ coeffs
    noise = rng.standard_normal((pair.dim, trials - n_band))
    h = float(np.mean(np.linalg.norm(np.diff(complex.local_points(1), axis=1)[:, 0, :], axis=1)))
    shifted = (pair.mass_matrix + h * pair.stiffness).tocsr()
    diag = shifted.diagonal()
    f_noise = _block_pcg(shifted, lambda r: r / diag[:, None], pair.mass[:, None] * noise,
                         tol=1e-10, max_iter=2000)
    ratios = sobolev_ratio(complex, decomposition, np.hstack([f_band, f_noise]), kernel=b)
    ratios = ratios[np.isfinite(ratios)]
    return SobolevReport(n, degree, 2.0 * n / (n - 2), float(ratios.max()), int(ratios.size), ratios, seed)
