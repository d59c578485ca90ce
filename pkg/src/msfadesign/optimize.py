"""Alternating design of filter-array spectral sensitivities.

Each outer iteration rebuilds the Wiener matrix from the current
sensitivities, then re-fits the sensitivities with the Wiener matrix held
fixed. With ``W`` fixed the reconstruction residual is linear in the
sensitivity entries, so the inner problem is a convex quadratic over the box
``[0, 1]^(M*L)``. It is solved by a primal-dual interior-point method.

The residual is measured after projecting every pixel spectrum onto a
``K``-dimensional spectral eigenbasis, which shrinks the objective without
changing its minimizer much when ``K`` captures the spectral variability.
"""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .cube import BlockGeometry, MsfaBlock, ShapeMismatchError, SpectralCube
from .mosaic import mosaic
from .wiener import (BlockAutocorrelation, WienerMatrix, demosaic, estimate_autocorrelation,
                     relative_ridge, wiener_from)

logger = logging.getLogger(__name__)


class ConvergenceWarning(UserWarning):
    """The inner constrained solve stopped before meeting its KKT tolerance."""


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """``K x L`` matrix of orthonormal spectral eigenvectors (one per row)."""

    vectors: np.ndarray
    source: str = "training-derived"

    def __post_init__(self) -> None:
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] > v.shape[1] or v.shape[0] < 1:
            raise ShapeMismatchError(f"eigenbasis must be K x L with 1 <= K <= L, got {v.shape}")
        if not np.allclose(v @ v.T, np.eye(v.shape[0]), rtol=0, atol=1e-10):
            raise ValueError("eigenbasis rows are not orthonormal")
        if self.source not in ("training-derived", "external-dataset"):
            raise ValueError(f"unknown eigenbasis source {self.source!r}")
        v.flags.writeable = False
        object.__setattr__(self, "vectors", v)

    @property
    def k(self) -> int:
        return self.vectors.shape[0]

    @property
    def bands(self) -> int:
        return self.vectors.shape[1]


def build_eigenbasis(source, k: int, rank_tol: float = 1e-10) -> EigenBasis:
    """Top-``k`` eigenvectors of the spectral autocorrelation of ``source``.

    ``source`` is a :class:`SpectralCube` (every pixel is a sample) or an
    ``(n, L)`` table of spectra. Rows come out in descending eigenvalue order,
    each signed so that its largest-magnitude entry is positive.
    """
    if isinstance(source, SpectralCube):
        spectra, tag = source.data.reshape(-1, source.bands), "training-derived"
    else:
        spectra, tag = np.asarray(source, dtype=np.float64), "external-dataset"
    if spectra.ndim != 2:
        raise ShapeMismatchError(f"spectral table must be 2-D (n, L), got shape {spectra.shape}")
    n, nb = spectra.shape
    if not 1 <= k <= nb:
        raise ValueError(f"K must be in [1, {nb}], got {k}")
    gram = spectra.T @ spectra / max(n, 1)
    vals, vecs = np.linalg.eigh(0.5 * (gram + gram.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if n < k or vals[0] <= 0 or vals[k - 1] <= rank_tol * vals[0]:
        raise ValueError(f"source has fewer than K={k} linearly independent spectra")
    basis = vecs[:, :k].T.copy()
    peaks = np.argmax(np.abs(basis), axis=1)
    basis *= np.sign(basis[np.arange(k), peaks])[:, None]
    return EigenBasis(basis, tag)


def load_spectral_table(path) -> np.ndarray:
    """Read a CSV of spectra, one per row; ``#`` lines are comments."""
    table = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    return table


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for :func:`optimize`.

    ``ridge`` is relative: each Wiener solve uses
    ``ridge * trace(phi R phi^T) / M``. ``ridge = 0`` disables regularization
    and lets singular systems raise.
    """

    iterations: int = 140
    k: int = 8
    seed: int = 0
    ridge: float = 1e-8
    inner_tolerance: float = 1e-8
    inner_max_steps: int = 200
    early_stop: bool = False

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.k < 1:
            raise ValueError("K must be >= 1")
        if not self.inner_tolerance > 0:
            raise ValueError("inner_tolerance must be > 0")
        if self.inner_max_steps < 1:
            raise ValueError("inner_max_steps must be >= 1")
        if not self.ridge >= 0:
            raise ValueError("ridge must be >= 0")


@dataclass
class OptimizationTrace:
    """Per-iteration record of an :func:`optimize` run."""

    seed: int
    initial_rmse: float = float("nan")
    start_objective: list[float] = field(default_factory=list)
    reduced_objective: list[float] = field(default_factory=list)
    full_rmse: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    inner_converged: list[bool] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.reduced_objective)

    def write_csv(self, path, timing: bool = True) -> None:
        """``iteration, reduced_objective, full_rmse, seconds``.

        With ``timing=False`` the seconds column is left empty so the file is
        reproducible byte for byte.
        """
        with open(path, "w", newline="", encoding="utf-8") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(["iteration", "reduced_objective", "full_rmse", "seconds"])
            for i in range(len(self)):
                secs = repr(self.seconds[i]) if timing else ""
                out.writerow([i + 1, repr(self.reduced_objective[i]), repr(self.full_rmse[i]), secs])


def _check_shapes(msfa: MsfaBlock, w: WienerMatrix, training: SpectralCube,
                  basis: EigenBasis) -> None:
    if msfa.geometry != w.geometry:
        raise ShapeMismatchError("MSFA and Wiener matrix have different block geometries")
    if not (msfa.bands == w.bands == training.bands == basis.bands):
        raise ShapeMismatchError(
            f"band counts disagree: MSFA {msfa.bands}, Wiener {w.bands}, "
            f"training {training.bands}, basis {basis.bands}"
        )


def _residual(msfa: MsfaBlock, w: WienerMatrix, training: SpectralCube) -> np.ndarray:
    estimate = demosaic(mosaic(training, msfa), w, training.wavelengths)
    return training.data - estimate.data


def reduced_objective(msfa: MsfaBlock, w: WienerMatrix, training: SpectralCube,
                      basis: EigenBasis) -> float:
    """l2 norm over all pixels of the eigenbasis-projected reconstruction residual."""
    _check_shapes(msfa, w, training, basis)
    return float(np.linalg.norm(_residual(msfa, w, training) @ basis.vectors.T))


def full_rmse(msfa: MsfaBlock, w: WienerMatrix, training: SpectralCube) -> float:
    """Root-mean-square reconstruction error over all ``H*W*L`` samples."""
    return float(np.sqrt(np.mean(_residual(msfa, w, training) ** 2)))


def _evaluate(msfa, w, training, basis) -> tuple[float, float]:
    res = _residual(msfa, w, training)
    return float(np.linalg.norm(res @ basis.vectors.T)), float(np.sqrt(np.mean(res ** 2)))


def quadratic_model(r: BlockAutocorrelation, w: WienerMatrix,
                    basis: EigenBasis) -> tuple[np.ndarray, np.ndarray, float]:
    """Per-block mean of the squared projected residual as ``x'Hx - 2g'x + c``.

    ``x`` is the row-major flattening of the ``M x L`` sensitivity matrix.
    Everything is expressed through the block autocorrelation, so the cost
    does not grow with image size.
    """
    m, nb = w.geometry.size, w.bands
    proj = basis.vectors.T @ basis.vectors  # U^T U, L x L
    ptp = np.kron(np.eye(m), proj)  # (I_M kron U)^T (I_M kron U)
    s = w.matrix.T @ ptp  # M x LM
    q = s @ w.matrix  # M x M
    hess = np.kron(q, np.ones((nb, nb))) * r.matrix
    hess = 0.5 * (hess + hess.T)
    rs = r.matrix @ s.T  # LM x M
    lin = rs[np.arange(m * nb), np.repeat(np.arange(m), nb)]
    const = float(np.sum(ptp * r.matrix))
    return hess, lin, const


@dataclass
class BoxQPResult:
    x: np.ndarray
    converged: bool
    steps: int
    kkt: float
    kkt_start: float


def _projected_gradient(x, grad) -> np.ndarray:
    return x - np.clip(x - grad, 0.0, 1.0)


def _max_step(v, dv) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def box_qp(hess: np.ndarray, lin: np.ndarray, x0: np.ndarray, tol: float = 1e-8,
           max_steps: int = 200) -> BoxQPResult:
    """Minimize ``x'Hx - 2 lin'x`` over ``[0, 1]^n`` for PSD ``H``.

    Mehrotra predictor-corrector interior-point iterations, followed by an
    active-set polish that puts bound-active entries exactly on their bounds;
    ``max_steps`` caps both phases together. Convergence means ``||x - clip(x - grad)|| <= tol * (1 + ||grad(x0)||)``.
    """
    n = lin.size
    x0 = np.clip(np.asarray(x0, dtype=np.float64), 0.0, 1.0)

    def grad(x):
        return 2.0 * (hess @ x - lin)

    kkt_start = float(np.linalg.norm(_projected_gradient(x0, grad(x0))))
    target = tol * (1.0 + float(np.linalg.norm(grad(x0))))

    # scaled problem: min 1/2 x'Hs x - bs'x, with unit-sized data
    scale = max(float(np.max(np.abs(np.diag(hess)), initial=0.0)),
                float(np.max(np.abs(lin), initial=0.0)), 1e-300)
    hs = 2.0 * hess / scale
    bs = 2.0 * lin / scale

    x = np.clip(x0, 0.05, 0.95)
    s = 1.0 - x
    g = hs @ x - bs
    zl = np.maximum(g, 0.0) + 1.0
    zu = np.maximum(-g, 0.0) + 1.0

    best_x, best_kkt = x0, kkt_start
    steps = 0
    for steps in range(1, max_steps + 1):
        rd = hs @ x - bs - zl + zu
        mu = float(x @ zl + s @ zu) / (2 * n)
        kmat = hs + np.diag(zl / x + zu / s)
        try:
            factor = scipy.linalg.cho_factor(kmat)
            solve = lambda rhs: scipy.linalg.cho_solve(factor, rhs)  # noqa: E731
        except np.linalg.LinAlgError:
            solve = lambda rhs: scipy.linalg.solve(kmat, rhs, assume_a="sym")  # noqa: E731

        def direction(tl, tu):
            rhs = -rd + (tl - x * zl) / x - (tu - s * zu) / s
            dx = solve(rhs)
            dzl = (tl - x * zl - zl * dx) / x
            dzu = (tu - s * zu + zu * dx) / s
            return dx, dzl, dzu

        def step_length(dx, dzl, dzu):
            return min(1.0, _max_step(x, dx), _max_step(s, -dx), _max_step(zl, dzl),
                       _max_step(zu, dzu))

        dx, dzl, dzu = direction(0.0, 0.0)
        a = step_length(dx, dzl, dzu)
        mu_aff = float((x + a * dx) @ (zl + a * dzl) + (s - a * dx) @ (zu + a * dzu)) / (2 * n)
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dzl, dzu = direction(sigma * mu - dx * dzl, sigma * mu + dx * dzu)
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dzl)) and np.all(np.isfinite(dzu))):
            break
        a = 0.99 * step_length(dx, dzl, dzu)
        # the upper slack is its own iterate; 1 - x would lose it to rounding near 1
        x = np.maximum(x + a * dx, 1e-300)
        s = np.maximum(s - a * dx, 1e-300)
        zl = np.maximum(zl + a * dzl, 1e-300)
        zu = np.maximum(zu + a * dzu, 1e-300)

        xc = np.clip(x, 0.0, 1.0)
        kkt = float(np.linalg.norm(_projected_gradient(xc, grad(xc))))
        if kkt < best_kkt:
            best_x, best_kkt = xc, kkt
        if kkt <= 0.1 * target or mu < 1e-20:
            break

    # bounds whose multiplier exceeds the gap at the last iterate are taken as active
    x, kkt, used = _refine(hess, lin, best_x, grad, 0.1 * target, max_steps - steps,
                           zl > x, zu > s)
    if kkt > best_kkt:
        x, kkt = best_x, best_kkt
    return BoxQPResult(x, kkt <= target, steps + used, kkt, kkt_start)


def _refine(hess, lin, x, grad, target, max_iter, guess_lower, guess_upper, bound_tol=1e-8):
    """Primal active-set polish of an interior-point iterate.

    Entries start on a bound when the interior-point duals mark it active
    (``guess_lower``/``guess_upper``, multiplier larger than the gap), or when
    they are within ``max(bound_tol, 10 * kkt)`` of it and their
    coordinate-wise minimizer lies past it. Each round
    takes a Newton direction on the free entries. The projected full step is
    kept when it descends, fixing every bound it reaches; otherwise the step
    stops at the first blocking bound. Once the free gradient is below
    ``target`` the bound with the most negative multiplier is released.
    """
    n = x.size
    diag = np.diag(hess)
    g = grad(x)
    kkt = float(np.linalg.norm(_projected_gradient(x, g)))
    eps = max(bound_tol, 10.0 * kkt)
    with np.errstate(divide="ignore", invalid="ignore"):
        step1d = np.where(diag > 0, x - 0.5 * g / diag, np.where(g > 0, -np.inf, np.inf))
    lower = ((x <= eps) & (g > 0) & (step1d <= 0.0)) | (x <= 0.0) | (guess_lower & (g > 0))
    upper = ((x >= 1.0 - eps) & (g < 0) & (step1d >= 1.0)) | (x >= 1.0) | (guess_upper & (g < 0))
    lower &= ~upper
    x = x.copy()
    x[lower], x[upper] = 0.0, 1.0

    used = 0
    for used in range(1, max_iter + 1):
        free = ~(lower | upper)
        g = grad(x)
        if np.linalg.norm(g[free]) <= target:
            mult = np.where(lower, g, np.where(upper, -g, np.inf))
            worst = int(np.argmin(mult))
            if mult[worst] >= -target:
                break
            lower[worst] = upper[worst] = False
            continue
        p = np.zeros(n)
        p[free], *_ = np.linalg.lstsq(hess[np.ix_(free, free)], -0.5 * g[free], rcond=None)
        slope, curv = float(g @ p), float(p @ hess @ p)
        if not slope < 0:
            break
        # exact minimizer along p, capped at the first bound it hits
        alpha = -0.5 * slope / curv if curv > 0 else np.inf
        ratios = np.full(n, np.inf)
        neg, pos = free & (p < 0), free & (p > 0)
        ratios[neg] = x[neg] / -p[neg]
        ratios[pos] = (1.0 - x[pos]) / p[pos]
        block = int(np.argmin(ratios))
        if ratios[block] <= alpha:
            # projected step first: it may fix many bounds at once
            if np.isfinite(alpha):
                trial = np.clip(x + alpha * p, 0.0, 1.0)
                d = trial - x
                if float(d @ hess @ d + d @ g) < 0.0:
                    lower |= free & (trial <= 0.0)
                    upper |= free & (trial >= 1.0)
                    x = trial
                    continue
            x = np.clip(x + ratios[block] * p, 0.0, 1.0)
            if p[block] < 0:
                x[block], lower[block] = 0.0, True
            else:
                x[block], upper[block] = 1.0, True
        elif np.isfinite(alpha):
            x = np.clip(x + alpha * p, 0.0, 1.0)
        else:
            break

    return x, float(np.linalg.norm(_projected_gradient(x, grad(x)))), used


def _inner_step(training, w_fixed, basis, start, cfg, r):
    hess, lin, _ = quadratic_model(r, w_fixed, basis)
    result = box_qp(hess, lin, start.sensitivities.reshape(-1), cfg.inner_tolerance,
                    cfg.inner_max_steps)
    candidate = MsfaBlock(start.geometry, result.x.reshape(start.sensitivities.shape),
                          start.wavelengths)
    start_obj = reduced_objective(start, w_fixed, training, basis)
    end_obj = reduced_objective(candidate, w_fixed, training, basis)
    if end_obj > start_obj:
        candidate, end_obj = start, start_obj
    return candidate, start_obj, end_obj, result


def inner_solve(training: SpectralCube, w_fixed: WienerMatrix, basis: EigenBasis,
                start: MsfaBlock, cfg: OptimizerConfig,
                r: BlockAutocorrelation | None = None) -> MsfaBlock:
    """Re-fit the sensitivities with the Wiener matrix held fixed.

    Starts from ``start`` and never returns a point with a larger reduced
    objective. Emits :class:`ConvergenceWarning` when the KKT tolerance is not
    reached within ``cfg.inner_max_steps``; the best iterate is returned.
    """
    _check_shapes(start, w_fixed, training, basis)
    if r is None:
        r = estimate_autocorrelation(training, start.geometry)
    msfa, _, _, result = _inner_step(training, w_fixed, basis, start, cfg, r)
    if not result.converged:
        warnings.warn(
            f"inner solve stopped after {result.steps} steps with projected-gradient norm "
            f"{result.kkt:.3g}", ConvergenceWarning, stacklevel=2)
    return msfa


def random_msfa(geometry: BlockGeometry, bands: int, seed: int, wavelengths=None) -> MsfaBlock:
    """I.i.d. uniform ``[0, 1]`` sensitivities from a seeded generator."""
    rng = np.random.default_rng(seed)
    return MsfaBlock(geometry, rng.uniform(0.0, 1.0, size=(geometry.size, bands)), wavelengths)


def _wiener(msfa, r, cfg):
    ridge = relative_ridge(msfa, r, cfg.ridge) if cfg.ridge > 0 else 0.0
    return wiener_from(msfa, r, ridge)


def optimize(training: SpectralCube, geometry: BlockGeometry, basis: EigenBasis | None = None,
             cfg: OptimizerConfig | None = None) -> tuple[MsfaBlock, WienerMatrix, OptimizationTrace]:
    """Design MSFA sensitivities for ``training``.

    Returns the final sensitivities, the Wiener matrix rebuilt from them and a
    per-iteration trace. When ``basis`` is omitted it is derived from the
    training spectra with ``cfg.k`` vectors.
    """
    cfg = OptimizerConfig() if cfg is None else cfg
    if basis is None:
        basis = build_eigenbasis(training, cfg.k)
    elif basis.k != cfg.k:
        raise ValueError(f"basis has {basis.k} vectors but cfg.k = {cfg.k}")
    if basis.bands != training.bands:
        raise ShapeMismatchError(
            f"basis has {basis.bands} bands, training cube has {training.bands}")

    r = estimate_autocorrelation(training, geometry)
    phi = random_msfa(geometry, training.bands, cfg.seed, training.wavelengths)
    trace = OptimizationTrace(seed=cfg.seed)

    w = _wiener(phi, r, cfg)
    _, trace.initial_rmse = _evaluate(phi, w, training, basis)
    for i in range(cfg.iterations):
        t0 = time.perf_counter()
        phi, start_obj, end_obj, result = _inner_step(training, w, basis, phi, cfg, r)
        w = _wiener(phi, r, cfg)
        _, rmse = _evaluate(phi, w, training, basis)
        trace.start_objective.append(start_obj)
        trace.reduced_objective.append(end_obj)
        trace.full_rmse.append(rmse)
        trace.inner_converged.append(result.converged)
        trace.seconds.append(time.perf_counter() - t0)
        logger.debug("iteration %d: reduced %.6g, rmse %.6g", i + 1, end_obj, rmse)
        if cfg.early_stop and i >= 5:
            recent = trace.reduced_objective[-6:]
            if max(recent) - min(recent) < 1e-12 * max(abs(recent[-1]), 1e-300):
                break

    if not all(trace.inner_converged):
        missed = trace.inner_converged.count(False)
        warnings.warn(f"{missed} inner solves did not reach the KKT tolerance",
                      ConvergenceWarning, stacklevel=2)
    if trace.full_rmse[-1] > trace.initial_rmse:
        warnings.warn(
            f"final RMSE {trace.full_rmse[-1]:.6g} exceeds the random start's "
            f"{trace.initial_rmse:.6g}", RuntimeWarning, stacklevel=2)
    return phi, w, trace
