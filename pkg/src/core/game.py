from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Literal

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, linprog, minimize

from src.config import SgdConfig
from .errors import (
    ClippingViolation,
    DimensionMismatch,
    Infeasible,
    NonFiniteInput,
    ProblemTooLarge,
    SolverFailed,
    StepTooLarge,
)
from .specialists import SpecialistMatrix, awake_prediction

logger = logging.getLogger(__name__)

# sigma >= 0 over rows; not necessarily a distribution.
WeightVector = np.ndarray

MAX_EXACT_ROWS = 50
MAX_EXACT_COLUMNS = 500
MAX_ENUMERATION = 20
# Above this many dense entries SGD slices the sparse matrix instead of a dense copy.
_DENSE_SGD_LIMIT = 2_000_000
_ENUM_CHUNK = 1 << 16
_HIGHS_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
# Smoothing widths for the full-batch polish, coarse to fine.
_POLISH_WIDTHS = (1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
_POLISH_OPTIONS = {"maxiter": 2000, "maxcor": 30, "ftol": 1e-15, "gtol": 1e-12}
_POLISH_RESTARTS = 3
# Relative slack below -alpha that counts as unbounded.
_INFEASIBLE_MARGIN = 1e-7


def _as_matrix(S: SpecialistMatrix | np.ndarray) -> SpecialistMatrix:
    return S if isinstance(S, SpecialistMatrix) else SpecialistMatrix.from_dense(S)


def _check(S: SpecialistMatrix, b: np.ndarray, sigma: np.ndarray | None, alpha: float) -> None:
    if b.shape != (S.num_rows,):
        raise DimensionMismatch(f"b has shape {b.shape}, expected ({S.num_rows},)")
    if not np.all(np.isfinite(b)) or not math.isfinite(alpha):
        raise NonFiniteInput("b and alpha must be finite")
    if not alpha > 0.0:
        raise ValueError("alpha must be > 0")
    if sigma is not None:
        if sigma.shape != (S.num_rows,):
            raise DimensionMismatch(f"sigma has shape {sigma.shape}, expected ({S.num_rows},)")
        if not np.all(np.isfinite(sigma)):
            raise NonFiniteInput("sigma must be finite")
        if np.any(sigma < 0):
            raise ValueError("sigma must be nonnegative")


# =======================
# Slack function
# =======================

def slack(
    S: SpecialistMatrix | np.ndarray, b: np.ndarray, sigma: WeightVector, alpha: float = 1.0
) -> float:
    """
    gamma_alpha(sigma) = -b^T sigma + (alpha / n) * sum_j [ |[S^T sigma]_j| - 1 ]_+
    """
    S = _as_matrix(S)
    b = np.asarray(b, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _check(S, b, sigma, alpha)
    hinge = np.maximum(np.abs(awake_prediction(S, sigma)) - 1.0, 0.0).sum()
    return float(-(b @ sigma) + alpha / S.n * hinge)


def subgradient(
    S: SpecialistMatrix | np.ndarray, b: np.ndarray, sigma: WeightVector, alpha: float = 1.0
) -> np.ndarray:
    """
    A subgradient of the slack at sigma.

    Columns exactly at a kink (|margin| == 1) contribute 0, which is a valid choice.
    """
    S = _as_matrix(S)
    b = np.asarray(b, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _check(S, b, sigma, alpha)
    a = awake_prediction(S, sigma)
    signs = np.where(np.abs(a) > 1.0, np.sign(a), 0.0)
    return -b + (alpha / S.n) * (S.matrix @ signs)


def clip_predictions(awake: np.ndarray) -> np.ndarray:
    """g_j = awake_j inside (-1, 1), sign(awake_j) otherwise."""
    awake = np.asarray(awake, dtype=np.float64)
    return np.where(np.abs(awake) < 1.0, awake, np.sign(awake))


def verify_clipping(awake: np.ndarray, g: np.ndarray) -> None:
    """Raise `ClippingViolation` unless g is the clipped form of `awake`."""
    if np.any(np.abs(g) > 1.0):
        raise ClippingViolation("prediction outside [-1, 1]")
    saturated = np.abs(awake) >= 1.0
    if np.any(g[saturated] != np.sign(awake[saturated])):
        raise ClippingViolation("saturated prediction differs from sign(awake)")


# =======================
# Minimization
# =======================

def rescale_along_ray(
    S: SpecialistMatrix, b: np.ndarray, sigma: WeightVector, alpha: float = 1.0
) -> WeightVector:
    """
    Minimize the slack exactly over { s * sigma : s >= 0 }.

    Along the ray the slack is -s b^T sigma + (alpha/n) sum_j [s |a_j| - 1]_+ with
    a = S^T sigma: piecewise linear in s with kinks at 1/|a_j|. Returns the better of the
    minimizer and sigma itself.
    """
    base = slack(S, b, sigma, alpha)
    beta = float(b @ sigma)
    if beta <= 0.0:
        return np.zeros_like(sigma) if base > 0.0 else sigma
    a = np.abs(awake_prediction(S, sigma))
    a = a[a > 0.0]
    if a.size == 0:
        return sigma
    order = np.argsort(1.0 / a, kind="stable")
    kinks = 1.0 / a[order]
    slope = -beta + np.cumsum((alpha / S.n) * a[order])
    # A slope that cancels to zero at the last kink may land a few ulps below it.
    hit = np.flatnonzero(slope >= -1e-12 * max(1.0, beta))
    if hit.size == 0:
        return sigma  # slack unbounded below along the ray
    candidate = kinks[hit[0]] * sigma
    return candidate if slack(S, b, candidate, alpha) < base else sigma


def smoothed_slack(
    S: SpecialistMatrix | np.ndarray,
    b: np.ndarray,
    sigma: WeightVector,
    alpha: float = 1.0,
    width: float = 1e-3,
) -> tuple[float, np.ndarray]:
    """
    The slack with each hinge [|a| - 1]_+ replaced by its Huber smoothing of `width`,
    and the gradient of that surrogate.

    The hinge becomes 0 for |a| <= 1, (|a| - 1)^2 / (2 width) up to |a| = 1 + width and
    |a| - 1 - width / 2 beyond. The surrogate never exceeds the slack and falls at most
    alpha * width / 2 below it.
    """
    S = _as_matrix(S)
    b = np.asarray(b, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    _check(S, b, sigma, alpha)
    if not width > 0.0:
        raise ValueError("width must be > 0")
    return _smoothed(sigma, S, b, alpha, width)


def _smoothed(
    sigma: np.ndarray, S: SpecialistMatrix, b: np.ndarray, alpha: float, width: float
) -> tuple[float, np.ndarray]:
    a = awake_prediction(S, sigma)
    excess = np.abs(a) - 1.0
    ramp = np.clip(excess / width, 0.0, 1.0)
    hinge = np.where(excess > width, excess - 0.5 * width, 0.5 * ramp * excess)
    value = float(-(b @ sigma) + alpha / S.n * hinge.sum())
    grad = -b + (alpha / S.n) * (S.matrix @ (np.sign(a) * ramp))
    return value, grad


def _polish(
    S: SpecialistMatrix, b: np.ndarray, sigma: WeightVector, alpha: float
) -> Iterator[WeightVector]:
    """
    Full-batch L-BFGS-B on the smoothed slack, one iterate per width, coarse to fine.

    A width is restarted from its own result, at most `_POLISH_RESTARTS` times, while a
    run stops short of convergence and still lowers the surrogate.
    """
    bounds = Bounds(np.zeros(S.num_rows), np.full(S.num_rows, np.inf))
    for width in _POLISH_WIDTHS:
        value = _smoothed(sigma, S, b, alpha, width)[0]
        for _ in range(_POLISH_RESTARTS):
            res = minimize(
                _smoothed,
                sigma,
                args=(S, b, alpha, width),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options=_POLISH_OPTIONS,
            )
            if not np.all(np.isfinite(res.x)) or not math.isfinite(res.fun):
                logger.debug("polish stopped at width %g: non-finite iterate", width)
                return
            logger.debug("polish width %g: %s after %d iterations", width, res.message, res.nit)
            improved = value - float(res.fun) > 1e-13 * max(1.0, abs(value))
            if float(res.fun) <= value:
                sigma, value = np.maximum(res.x, 0.0), float(res.fun)
            if res.success or not improved:
                break
        yield sigma


def minimize_slack(
    S: SpecialistMatrix | np.ndarray,
    b: np.ndarray,
    alpha: float,
    config: SgdConfig,
) -> WeightVector:
    """
    Projected minibatch SGD on the slack, started at sigma = 0, then a full-batch polish.

    Each epoch visits the columns in a fresh random order, in batches of
    `config.batch_size`. A step uses the stochastic subgradient
    -b + (alpha / |batch|) * sum_{j in batch, |margin_j| > 1} sign(margin_j) S_.j
    with step size step0 / sqrt(t), then projects onto sigma >= 0. After every epoch the
    epoch-average and last iterates are refined by `rescale_along_ray`. SGD ends early
    when two consecutive epoch averages differ in slack by less than `config.tolerance`.

    With `config.polish` the best SGD point then seeds L-BFGS-B on `smoothed_slack` with
    shrinking widths. The point with the lowest true slack seen anywhere is returned.

    Raises
    ------
    StepTooLarge
        When an epoch ends with slack above slack(0) + 10 * max(1, |slack(0)|).
    Infeasible
        When the slack drops below -alpha. The minimum is at least -alpha whenever some
        labeling in [-alpha, alpha]^n meets the bounds, so the slack is unbounded below.
    """
    S = _as_matrix(S)
    b = np.asarray(b, dtype=np.float64)
    _check(S, b, None, alpha)
    p, n = S.num_rows, S.n
    rng = np.random.default_rng(config.seed)

    norms = S.row_norms()
    step0 = config.step0 if config.step0 is not None else 1.0 / max(float(norms.max()), 1e-12)
    dense = p * n <= _DENSE_SGD_LIMIT
    columns = S.to_dense() if dense else S.matrix.tocsc()
    floor = -alpha - _INFEASIBLE_MARGIN * max(1.0, alpha)

    sigma = np.zeros(p)
    start = slack(S, b, sigma, alpha)
    limit = start + 10.0 * max(1.0, abs(start))
    previous: float | None = None
    best, best_slack = sigma, start

    def consider(candidate: WeightVector) -> None:
        nonlocal best, best_slack
        refined = rescale_along_ray(S, b, candidate, alpha)
        refined_slack = slack(S, b, refined, alpha)
        if refined_slack < floor:
            raise Infeasible(
                f"slack fell to {refined_slack:.6g} below -alpha={-alpha:g}; "
                "no labeling satisfies the correlation bounds"
            )
        if refined_slack < best_slack:
            best, best_slack = refined, refined_slack

    t = 0
    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        total = np.zeros(p)
        steps = 0
        for lo in range(0, n, config.batch_size):
            batch = perm[lo:lo + config.batch_size]
            block = columns[:, batch]
            margins = block.T @ sigma
            signs = np.where(np.abs(margins) > 1.0, np.sign(margins), 0.0)
            grad = -b + (alpha / batch.size) * (block @ signs)
            t += 1
            sigma = np.maximum(0.0, sigma - (step0 / math.sqrt(t)) * grad)
            total += sigma
            steps += 1
        average = total / steps

        current = slack(S, b, sigma, alpha)
        if not math.isfinite(current) or current > limit:
            raise StepTooLarge(
                f"slack rose to {current:.6g} at epoch {epoch} (limit {limit:.6g}); lower step0"
            )
        averaged = slack(S, b, average, alpha)
        consider(average)
        consider(sigma)
        logger.debug("epoch %d: slack(last)=%.9g slack(avg)=%.9g", epoch, current, averaged)
        if previous is not None and abs(previous - averaged) < config.tolerance:
            logger.debug("slack settled after %d epochs", epoch + 1)
            break
        previous = averaged

    if config.polish:
        sgd_slack = best_slack
        for polished in _polish(S, b, best, alpha):
            consider(polished)
        logger.debug("polish moved the slack from %.9g to %.9g", sgd_slack, best_slack)
    return best


# =======================
# Exact small-instance oracles
# =======================

def _require_small(S: SpecialistMatrix) -> None:
    if S.num_rows > MAX_EXACT_ROWS or S.n > MAX_EXACT_COLUMNS:
        raise ProblemTooLarge(
            f"exact oracle limited to {MAX_EXACT_ROWS} rows x {MAX_EXACT_COLUMNS} columns, "
            f"got {S.num_rows} x {S.n}"
        )


def exact_solve_small(
    S: SpecialistMatrix | np.ndarray, b: np.ndarray, alpha: float = 1.0
) -> tuple[WeightVector, float]:
    """
    Minimize the slack exactly through its epigraph LP.

        min  -b^T sigma + (alpha/n) sum_j xi_j
        s.t. xi_j >=  [S^T sigma]_j - 1,  xi_j >= -[S^T sigma]_j - 1,  sigma, xi >= 0

    Returns (sigma*, gamma*) with gamma* re-evaluated through `slack`.
    """
    S = _as_matrix(S)
    b = np.asarray(b, dtype=np.float64)
    _check(S, b, None, alpha)
    _require_small(S)
    p, n = S.num_rows, S.n
    St = S.to_dense().T
    eye = np.eye(n)
    c = np.concatenate([-b, np.full(n, alpha / n)])
    A_ub = np.block([[St, -eye], [-St, -eye]])
    b_ub = np.ones(2 * n)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=(0, None), method="highs", options=_HIGHS_OPTIONS)
    # The LP always has a feasible point, so "infeasible or unbounded" means unbounded.
    if res.status in (2, 3):
        raise Infeasible("slack is unbounded below: no labeling satisfies the bounds")
    if res.status != 0:
        raise SolverFailed(f"LP solver failed: {res.message}")
    sigma = np.maximum(res.x[:p], 0.0)
    return sigma, slack(S, b, sigma, alpha)


def brute_force_feasible_labelings(
    F: SpecialistMatrix | np.ndarray, b: np.ndarray, tol: float = 1e-12
) -> list[np.ndarray]:
    """All z in {-1,+1}^n with (1/n) F z >= b (up to `tol`), in binary counting order."""
    S = _as_matrix(F)
    b = np.asarray(b, dtype=np.float64)
    n = S.n
    if n > MAX_ENUMERATION:
        raise ProblemTooLarge(f"enumeration limited to n <= {MAX_ENUMERATION}, got {n}")
    dense = S.to_dense()
    bits = np.arange(n)[::-1]
    feasible: list[np.ndarray] = []
    for lo in range(0, 1 << n, _ENUM_CHUNK):
        codes = np.arange(lo, min(lo + _ENUM_CHUNK, 1 << n))
        Z = ((codes[:, None] >> bits) & 1) * 2.0 - 1.0
        corr = (dense @ Z.T) / n
        ok = np.all(corr >= b[:, None] - tol, axis=0)
        feasible.extend(Z[k] for k in np.flatnonzero(ok))
    return feasible


def adversary_value(
    S: SpecialistMatrix | np.ndarray, b: np.ndarray, g: np.ndarray, alpha: float = 1.0
) -> float:
    """
    The adversary's best response value: min (1/n) z^T g over z in [-alpha, alpha]^n
    with (1/n) S z >= b.
    """
    S = _as_matrix(S)
    b = np.asarray(b, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    _check(S, b, None, alpha)
    _require_small(S)
    if g.shape != (S.n,):
        raise DimensionMismatch(f"g has shape {g.shape}, expected ({S.n},)")
    n = S.n
    res = linprog(
        g / n,
        A_ub=-S.to_dense() / n,
        b_ub=-b,
        bounds=(-alpha, alpha),
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status == 2:
        raise Infeasible("no labeling in [-alpha, alpha]^n satisfies the bounds")
    if res.status != 0:
        raise SolverFailed(f"LP solver failed: {res.message}")
    return float(res.fun)


def feasibility_scale(
    S: SpecialistMatrix | np.ndarray, b: np.ndarray, alpha: float = 1.0
) -> float:
    """
    Largest t in [0, 1] such that some z in [-alpha, alpha]^n has (1/n) S z >= t b.

    Solved as one sparse LP over (z, t), so any matrix size is accepted.
    """
    S = _as_matrix(S)
    b = np.asarray(b, dtype=np.float64)
    _check(S, b, None, alpha)
    n = S.n
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_ub = sparse.hstack([-S.matrix / n, sparse.csr_matrix(b[:, None])], format="csr")
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=np.zeros(S.num_rows),
        bounds=[(-alpha, alpha)] * n + [(0.0, 1.0)],
        method="highs",
        options=_HIGHS_OPTIONS,
    )
    if res.status != 0:
        raise SolverFailed(f"LP solver failed: {res.message}")
    return min(max(float(res.x[-1]), 0.0), 1.0)


# =======================
# Solutions
# =======================

@dataclass(frozen=True)
class GameSolution:
    """
    sigma*, the minimized slack and the minimax predictions on the unlabeled set.

    `value` is the worst-case correlation guarantee -gamma*; the worst-case error on the
    unlabeled set is (1 - value) / 2.
    """

    sigma_star: WeightVector
    gamma_star: float
    awake: np.ndarray
    g: np.ndarray

    @property
    def value(self) -> float:
        return -self.gamma_star

    @property
    def margins(self) -> np.ndarray:
        return np.abs(self.awake)


def solve_game(
    S: SpecialistMatrix,
    b: np.ndarray,
    alpha: float,
    solver: Literal["sgd", "exact"] = "sgd",
    sgd: SgdConfig | None = None,
) -> GameSolution:
    """Find sigma* with the chosen solver and derive the clipped predictions."""
    if solver == "exact":
        sigma, gamma = exact_solve_small(S, b, alpha)
    else:
        sigma = minimize_slack(S, b, alpha, sgd or SgdConfig())
        gamma = slack(S, b, sigma, alpha)
    awake = awake_prediction(S, sigma)
    g = clip_predictions(awake)
    verify_clipping(awake, g)
    logger.info(
        "solved game (%s, alpha=%g): value=%.6f, %d of %d rows weighted",
        solver, alpha, -gamma, int(np.count_nonzero(sigma)), sigma.size,
    )
    return GameSolution(sigma_star=sigma, gamma_star=gamma, awake=awake, g=g)
