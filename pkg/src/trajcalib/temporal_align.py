"""Time-delay estimation by aligning velocity-magnitude profiles.

The anchor trajectory's knot states stay fixed; the other trajectory is
interpolated at anchor times shifted by the candidate delay.  Velocity
magnitudes are invariant to rigid frame changes, so the delay can be
estimated before any extrinsic calibration exists.  A coarse grid search
locates the global basin (the profile-matching cost has local minima for
repetitive motion), then Levenberg-Marquardt polishes the scalar delay
with the analytical residual derivative.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientCorrespondencesError, InsufficientOverlapError
from .gp_trajectory import GPTrajectory, TrajectoryState, interpolate_many

# Below this velocity magnitude the residual derivative is treated as zero
# instead of dividing by a vanishing norm; the residual still contributes.
VELOCITY_EPS = 1e-6

# Mean |d residual / d delay| below which the delay is reported as
# unobservable (constant-velocity motion carries no timing information).
OBSERVABILITY_FLOOR = 1e-3

MIN_OVERLAP_KNOTS = 10


@dataclass
class DelayConfig:
    """Knobs for the coarse search and the Levenberg-Marquardt polish."""

    initial_delay: float = 0.0
    coarse_search_halfwidth: float = 1.0
    coarse_search_step: float = 0.05
    max_iterations: int = 100
    cost_tolerance: float = 1e-10
    parameter_tolerance: float = 1e-7
    lm_initial_damping: float = 1e-4

    def __post_init__(self):
        if not np.isfinite(self.initial_delay):
            raise ValueError("initial_delay must be finite")
        for name in (
            "coarse_search_halfwidth",
            "coarse_search_step",
            "cost_tolerance",
            "parameter_tolerance",
            "lm_initial_damping",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.coarse_search_step >= self.coarse_search_halfwidth:
            raise ValueError("coarse_search_step must be below coarse_search_halfwidth")


@dataclass
class DelayEstimate:
    """Estimated time delay plus convergence and observability diagnostics.

    ``delay`` maps anchor times onto the other sensor's clock: the state
    of the other sensor matching anchor knot time t is at time t + delay.
    """

    delay: float
    final_cost: float
    rms_residual: float
    iterations: int
    converged: bool
    observability: float
    n_correspondences: int


@dataclass(eq=False)
class CorrespondencePair:
    """Anchor knot state paired with the other sensor's interpolated state."""

    anchor_state: TrajectoryState
    other_state: TrajectoryState


def velocity_magnitude(state: TrajectoryState) -> float:
    """Euclidean norm of the velocity block."""
    return float(np.linalg.norm(state.velocity))


def _included_mask(anchor_times: np.ndarray, other: GPTrajectory, delay: float):
    shifted = anchor_times + delay
    return (shifted >= other.start) & (shifted <= other.end), shifted


def _residuals(anchor_times, anchor_vmags, other, delay):
    """Residual vector and inclusion mask for one candidate delay."""
    mask, shifted = _included_mask(anchor_times, other, delay)
    if int(mask.sum()) < MIN_OVERLAP_KNOTS:
        raise InsufficientOverlapError(
            f"only {int(mask.sum())} anchor knots overlap the other trajectory "
            f"at delay {delay:+.6f} s (need {MIN_OVERLAP_KNOTS})"
        )
    states = interpolate_many(other, shifted[mask])
    vmag_other = np.linalg.norm(states[:, 3:6], axis=1)
    return anchor_vmags[mask] - vmag_other, mask


def delay_residuals(anchor: GPTrajectory, other: GPTrajectory, delay: float) -> np.ndarray:
    """Velocity-magnitude mismatch per anchor knot at the given delay.

    One residual per anchor knot whose shifted time falls inside the other
    trajectory's support; out-of-support knots are dropped (compare the
    result length with ``len(anchor)`` for the exclusion count).
    """
    res, _ = _residuals(anchor.times, anchor.velocity_magnitudes(), other, float(delay))
    return res


def delay_jacobian(other: GPTrajectory, anchor_times, delay: float) -> np.ndarray:
    """Analytical derivative of each residual with respect to the delay.

    Evaluates -(v . a)/|v| of the other trajectory at the shifted times;
    entries where |v| < VELOCITY_EPS are zeroed rather than divided out.
    Uses the same inclusion rule as ``delay_residuals``.
    """
    anchor_times = np.asarray(anchor_times, dtype=float)
    mask, shifted = _included_mask(anchor_times, other, float(delay))
    states = interpolate_many(other, shifted[mask])
    v = states[:, 3:6]
    a = states[:, 6:9]
    vnorm = np.linalg.norm(v, axis=1)
    jac = np.zeros(len(vnorm))
    ok = vnorm >= VELOCITY_EPS
    jac[ok] = -np.einsum("ij,ij->i", v[ok], a[ok]) / vnorm[ok]
    return jac


def _grid(cfg: DelayConfig) -> np.ndarray:
    half_steps = int(round(cfg.coarse_search_halfwidth / cfg.coarse_search_step))
    return cfg.initial_delay + cfg.coarse_search_step * np.arange(
        -half_steps, half_steps + 1
    )


def coarse_delay_search(anchor: GPTrajectory, other: GPTrajectory, cfg: DelayConfig) -> float:
    """Grid argmin of the summed squared residual cost around initial_delay.

    A flat cost (unobservable delay) returns ``cfg.initial_delay`` instead
    of an arbitrary grid corner.
    """
    anchor_times = anchor.times
    anchor_vmags = anchor.velocity_magnitudes()
    grid = _grid(cfg)
    costs = np.empty(len(grid))
    for k, d in enumerate(grid):
        res, _ = _residuals(anchor_times, anchor_vmags, other, d)
        costs[k] = res @ res
    spread = costs.max() - costs.min()
    if spread <= 1e-12 * max(1.0, costs.max()):
        return float(cfg.initial_delay)
    return float(grid[int(np.argmin(costs))])


def estimate_delay(anchor: GPTrajectory, other: GPTrajectory, cfg: DelayConfig | None = None) -> DelayEstimate:
    """Coarse search plus Levenberg-Marquardt refinement of the delay.

    Deterministic for fixed inputs.  Non-convergence is reported through
    the ``converged`` flag, not raised; an unobservable profile (near-zero
    mean residual derivative) additionally emits a RuntimeWarning.
    """
    if cfg is None:
        cfg = DelayConfig()
    anchor_times = anchor.times
    anchor_vmags = anchor.velocity_magnitudes()

    delay = coarse_delay_search(anchor, other, cfg)
    res, mask = _residuals(anchor_times, anchor_vmags, other, delay)
    cost = float(res @ res)
    lam = cfg.lm_initial_damping
    converged = False
    iterations = 0
    jac = delay_jacobian(other, anchor_times, delay)

    for iterations in range(1, cfg.max_iterations + 1):
        jac = delay_jacobian(other, anchor_times, delay)
        g = float(jac @ res)
        h = float(jac @ jac)
        if h <= 0.0:
            converged = True
            break

        accepted = False
        step = 0.0
        for _ in range(25):
            step = -g / (h * (1.0 + lam))
            try:
                res_new, mask_new = _residuals(
                    anchor_times, anchor_vmags, other, delay + step
                )
            except InsufficientOverlapError:
                lam *= 10.0
                continue
            cost_new = float(res_new @ res_new)
            if cost_new < cost:
                accepted = True
                break
            lam *= 10.0

        if not accepted:
            # Damping exhausted without improvement: at a local minimum.
            converged = True
            break

        cost_drop = cost - cost_new
        delay += step
        res, mask, cost = res_new, mask_new, cost_new
        lam = max(lam * 0.1, 1e-15)
        if abs(step) < cfg.parameter_tolerance:
            converged = True
            break
        if cost_drop <= cfg.cost_tolerance * max(cost, 1e-300):
            converged = True
            break

    observability = float(np.mean(np.abs(jac))) if len(jac) else 0.0
    if observability < OBSERVABILITY_FLOOR:
        warnings.warn(
            f"delay is weakly observable (mean |d r/d delay| = {observability:.3e} "
            "m/s^2); velocity magnitude is nearly constant",
            RuntimeWarning,
            stacklevel=2,
        )
    return DelayEstimate(
        delay=float(delay),
        final_cost=cost,
        rms_residual=float(np.sqrt(cost / len(res))),
        iterations=iterations,
        converged=converged,
        observability=observability,
        n_correspondences=int(len(res)),
    )


def build_correspondences(anchor: GPTrajectory, other: GPTrajectory, delay: float) -> list[CorrespondencePair]:
    """Pair every anchor knot with the other trajectory at the shifted time.

    Knots whose shifted time exits the other trajectory's support are
    skipped.  Raises when fewer than three pairs remain, since that is the
    identifiability floor for rigid registration.
    """
    delay = float(delay)
    if not np.isfinite(delay):
        raise ValueError("delay must be finite")
    mask, shifted = _included_mask(anchor.times, other, delay)
    count = int(mask.sum())
    if count < 3:
        raise InsufficientCorrespondencesError(
            f"only {count} anchor knots map into the other trajectory's support"
        )
    others = interpolate_many(other, shifted[mask])
    pairs = []
    for idx, k in enumerate(np.flatnonzero(mask)):
        pairs.append(
            CorrespondencePair(
                anchor_state=TrajectoryState.from_vector(anchor.times[k], anchor.states[k]),
                other_state=TrajectoryState.from_vector(shifted[k], others[idx]),
            )
        )
    return pairs


def delay_cost_curve(anchor: GPTrajectory, other: GPTrajectory, delays) -> np.ndarray:
    """Summed squared residual cost sampled at caller-given delays, as (M, 2)."""
    anchor_times = anchor.times
    anchor_vmags = anchor.velocity_magnitudes()
    delays = np.asarray(delays, dtype=float)
    out = np.empty((len(delays), 2))
    for k, d in enumerate(delays):
        res, _ = _residuals(anchor_times, anchor_vmags, other, d)
        out[k, 0] = d
        out[k, 1] = res @ res
    return out
