"""Batch Gaussian-process trajectory regression under a constant-acceleration prior.

A trajectory is modeled as a Gauss-Markov process whose state stacks
position, velocity and acceleration per axis (9 states total) and whose
jerk is driven by white noise with power spectral density ``qc``.  The
posterior mean over all measurement times solves one symmetric
block-tridiagonal linear system, so regression costs O(N), and the
posterior at any interior time is a closed-form function of the two
bracketing knot states, so queries cost O(1).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import lapack

from .errors import NumericalError, OutOfSupportError

STATE_DIM = 9

# Scalar coefficient pattern of the process-noise block for unit qc and
# unit dt, and its exact integer inverse.  Entry (a, b) of the dt-scaled
# block is _Q_UNIT[a, b] * dt**(5 - a - b) (inverse: dt**(a + b - 5)).
_Q_UNIT = np.array([
    [1.0 / 20.0, 1.0 / 8.0, 1.0 / 6.0],
    [1.0 / 8.0, 1.0 / 3.0, 1.0 / 2.0],
    [1.0 / 6.0, 1.0 / 2.0, 1.0],
])
_Q_UNIT_INV = np.array([
    [720.0, -360.0, 60.0],
    [-360.0, 192.0, -36.0],
    [60.0, -36.0, 9.0],
])

_EYE3 = np.eye(3)


def _as_vector(x, n, name):
    arr = np.asarray(x, dtype=float).reshape(-1)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have {n} elements, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def _check_spd(m, name, sym_tol=1e-12):
    arr = np.asarray(m, dtype=float)
    if arr.shape != (3, 3) and arr.shape != (9, 9):
        raise ValueError(f"{name} must be a 3x3 or 9x9 matrix, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    scale = max(1.0, np.abs(arr).max())
    if np.abs(arr - arr.T).max() > sym_tol * scale:
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(arr)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return arr


@dataclass(eq=False)
class TrajectoryState:
    """Object state at one instant: position, velocity, acceleration.

    Times are seconds on the owning sensor's clock; the stacked vector
    order is [position; velocity; acceleration].
    """

    time: float
    position: np.ndarray
    velocity: np.ndarray
    acceleration: np.ndarray

    def __post_init__(self):
        self.time = float(self.time)
        if not np.isfinite(self.time):
            raise ValueError("time must be finite")
        self.position = _as_vector(self.position, 3, "position")
        self.velocity = _as_vector(self.velocity, 3, "velocity")
        self.acceleration = _as_vector(self.acceleration, 3, "acceleration")

    def as_vector(self) -> np.ndarray:
        """Return the 9-vector [position; velocity; acceleration]."""
        return np.concatenate([self.position, self.velocity, self.acceleration])

    @classmethod
    def from_vector(cls, time: float, x) -> "TrajectoryState":
        x = _as_vector(x, STATE_DIM, "state vector")
        return cls(time=time, position=x[0:3], velocity=x[3:6], acceleration=x[6:9])

    def __eq__(self, other):
        if not isinstance(other, TrajectoryState):
            return NotImplemented
        return (
            self.time == other.time
            and np.array_equal(self.position, other.position)
            and np.array_equal(self.velocity, other.velocity)
            and np.array_equal(self.acceleration, other.acceleration)
        )


@dataclass(eq=False)
class Measurement:
    """One timestamped 3D position observation with its noise covariance."""

    time: float
    position: np.ndarray
    noise_cov: np.ndarray

    def __post_init__(self):
        self.time = float(self.time)
        if not np.isfinite(self.time):
            raise ValueError("measurement time must be finite")
        self.position = _as_vector(self.position, 3, "position")
        self.noise_cov = _check_spd(self.noise_cov, "noise_cov")

    def __eq__(self, other):
        if not isinstance(other, Measurement):
            return NotImplemented
        return (
            self.time == other.time
            and np.array_equal(self.position, other.position)
            and np.array_equal(self.noise_cov, other.noise_cov)
        )


@dataclass(eq=False)
class MeasurementSet:
    """One sensor's position track: strictly increasing times, >= 3 points.

    ``epoch`` records a base timestamp that was subtracted from raw input
    stamps (0.0 when times are used as given); it lets callers recover
    offsets between two sensors' original clocks.
    """

    sensor_id: str
    measurements: list[Measurement]
    epoch: float = 0.0

    def __post_init__(self):
        if len(self.measurements) < 3:
            raise ValueError(
                f"need at least 3 measurements, got {len(self.measurements)}"
            )
        times = np.array([m.time for m in self.measurements])
        if not np.all(np.diff(times) > 0):
            raise ValueError("measurement times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.measurements)

    @cached_property
    def times(self) -> np.ndarray:
        return np.array([m.time for m in self.measurements])

    @cached_property
    def positions(self) -> np.ndarray:
        return np.array([m.position for m in self.measurements])

    @cached_property
    def noise_covs(self) -> np.ndarray:
        return np.array([m.noise_cov for m in self.measurements])

    def mean_rate(self) -> float:
        """Mean sample rate in Hz."""
        span = self.measurements[-1].time - self.measurements[0].time
        return (len(self.measurements) - 1) / span


@dataclass(eq=False)
class MotionPrior:
    """Constant-acceleration prior: jerk PSD, initial state mean/covariance.

    The prior has no exogenous control input, so ``control_input`` is fixed
    to zero and kept only to make that modeling assumption explicit.
    """

    qc: np.ndarray
    initial_mean: np.ndarray
    initial_cov: np.ndarray
    control_input: np.ndarray = field(default_factory=lambda: np.zeros(STATE_DIM))

    def __post_init__(self):
        self.qc = _check_spd(self.qc, "qc")
        if self.qc.shape != (3, 3):
            raise ValueError("qc must be 3x3")
        self.initial_mean = _as_vector(self.initial_mean, STATE_DIM, "initial_mean")
        self.initial_cov = _check_spd(self.initial_cov, "initial_cov")
        if self.initial_cov.shape != (STATE_DIM, STATE_DIM):
            raise ValueError("initial_cov must be 9x9")
        self.control_input = _as_vector(self.control_input, STATE_DIM, "control_input")
        if np.any(self.control_input != 0.0):
            raise ValueError("control_input must be identically zero")


def default_prior(data: MeasurementSet, qc_scale: float = 1.0) -> MotionPrior:
    """Weak data-dominated prior anchored at the first measurement.

    Initial mean takes the first measured position with zero velocity and
    acceleration; the initial covariance is 1e2 per axis on every state so
    the posterior start is measurement-driven.  ``qc_scale`` sets the
    isotropic jerk PSD in (m/s^2)^2/s.
    """
    if qc_scale <= 0 or not np.isfinite(qc_scale):
        raise ValueError("qc_scale must be positive and finite")
    mean = np.zeros(STATE_DIM)
    mean[0:3] = data.measurements[0].position
    return MotionPrior(
        qc=qc_scale * np.eye(3),
        initial_mean=mean,
        initial_cov=1e2 * np.eye(STATE_DIM),
    )


# ---------------------------------------------------------------------------
# Model matrices.  Both the transition and process-noise blocks factor as a
# 3x3 scalar coefficient pattern Kronecker-multiplied with a 3x3 axis block
# (identity for the transition, qc for the noise); the batched internals
# work on the coefficient patterns and expand only where needed.


def _phi_coef(dt) -> np.ndarray:
    """Coefficient pattern of the transition matrix, batched over dt."""
    dt = np.asarray(dt, dtype=float)
    out = np.zeros(dt.shape + (3, 3))
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = 1.0
    out[..., 2, 2] = 1.0
    out[..., 0, 1] = dt
    out[..., 1, 2] = dt
    out[..., 0, 2] = 0.5 * dt * dt
    return out


def _q_coef(dt) -> np.ndarray:
    """Coefficient pattern of the process-noise block, batched over dt."""
    dt = np.asarray(dt, dtype=float)
    d2 = dt * dt
    d3 = d2 * dt
    d4 = d3 * dt
    d5 = d4 * dt
    out = np.empty(dt.shape + (3, 3))
    out[..., 0, 0] = d5 / 20.0
    out[..., 0, 1] = out[..., 1, 0] = d4 / 8.0
    out[..., 0, 2] = out[..., 2, 0] = d3 / 6.0
    out[..., 1, 1] = d3 / 3.0
    out[..., 1, 2] = out[..., 2, 1] = d2 / 2.0
    out[..., 2, 2] = dt
    return out


def _q_coef_inv(dt) -> np.ndarray:
    """Exact inverse of the process-noise coefficient pattern."""
    dt = np.asarray(dt, dtype=float)
    inv_dt = 1.0 / dt
    i2 = inv_dt * inv_dt
    i3 = i2 * inv_dt
    i4 = i3 * inv_dt
    i5 = i4 * inv_dt
    out = np.empty(dt.shape + (3, 3))
    out[..., 0, 0] = 720.0 * i5
    out[..., 0, 1] = out[..., 1, 0] = -360.0 * i4
    out[..., 0, 2] = out[..., 2, 0] = 60.0 * i3
    out[..., 1, 1] = 192.0 * i3
    out[..., 1, 2] = out[..., 2, 1] = -36.0 * i2
    out[..., 2, 2] = 9.0 * inv_dt
    return out


def _kron3(coef: np.ndarray, block: np.ndarray) -> np.ndarray:
    """Expand batched 3x3 coefficient patterns into 9x9 state blocks."""
    out = np.einsum("...ab,cd->...acbd", coef, block)
    return out.reshape(coef.shape[:-2] + (STATE_DIM, STATE_DIM))


def transition(dt: float) -> np.ndarray:
    """9x9 state-transition matrix over a nonnegative interval ``dt``."""
    if not np.isfinite(dt) or dt < 0:
        raise ValueError(f"dt must be finite and nonnegative, got {dt}")
    return _kron3(_phi_coef(float(dt)), _EYE3)


def process_noise(dt: float, qc) -> np.ndarray:
    """9x9 process-noise covariance accumulated over ``dt`` with jerk PSD ``qc``."""
    if not np.isfinite(dt) or dt <= 0:
        raise ValueError(f"dt must be positive (Q is singular otherwise), got {dt}")
    qc = _check_spd(qc, "qc")
    return _kron3(_q_coef(float(dt)), qc)


def prior_mean_at(prior: MotionPrior, t0: float, t: float) -> np.ndarray:
    """Prior mean state at ``t`` propagated from the initial mean at ``t0``."""
    if t < t0:
        raise ValueError(f"t ({t}) must not precede t0 ({t0})")
    return transition(t - t0) @ prior.initial_mean


@dataclass(eq=False)
class GPTrajectory:
    """Posterior mean trajectory over the measurement knots.

    ``states`` and ``prior_states`` are (N, 9) arrays aligned with
    ``times``; the listy ``posterior_means``/``prior_means`` views are
    built on demand.  Instances are immutable by convention and safe to
    share across threads.
    """

    prior: MotionPrior
    times: np.ndarray
    states: np.ndarray
    prior_states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        self.prior_states = np.asarray(self.prior_states, dtype=float)
        n = self.times.shape[0]
        if self.states.shape != (n, STATE_DIM) or self.prior_states.shape != (n, STATE_DIM):
            raise ValueError("states/prior_states must be (N, 9) aligned with times")
        if not np.all(np.diff(self.times) > 0):
            raise ValueError("knot times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @property
    def posterior_means(self) -> list[TrajectoryState]:
        return [
            TrajectoryState.from_vector(t, x) for t, x in zip(self.times, self.states)
        ]

    @property
    def prior_means(self) -> list[np.ndarray]:
        return [x.copy() for x in self.prior_states]

    @property
    def start(self) -> float:
        return float(self.times[0])

    @property
    def end(self) -> float:
        return float(self.times[-1])

    def velocity_magnitudes(self) -> np.ndarray:
        """Euclidean velocity norm at every knot."""
        return np.linalg.norm(self.states[:, 3:6], axis=1)


def _assemble_banded(diag_blocks: np.ndarray, sub_blocks: np.ndarray) -> np.ndarray:
    """Pack block-tridiagonal data into LAPACK lower-banded storage."""
    n = diag_blocks.shape[0]
    m = STATE_DIM
    ab = np.zeros((2 * m, n * m))
    cols = np.arange(n) * m
    for a in range(m):
        for b in range(a + 1):
            ab[a - b, cols + b] = diag_blocks[:, a, b]
    cols = np.arange(n - 1) * m
    for a in range(m):
        for b in range(m):
            ab[m + a - b, cols + b] = sub_blocks[:, a, b]
    return ab


def regress(data: MeasurementSet, prior: MotionPrior) -> GPTrajectory:
    """Solve the batch GP posterior with one knot per measurement time.

    Builds the inverse prior kernel from per-interval transition and
    process-noise blocks (block tridiagonal by the Markov property), adds
    the measurement information, and solves via a banded Cholesky
    factorization in O(N).

    Raises:
        NumericalError: the assembled system is not positive definite;
            carries the offending block index.
    """
    times = data.times
    n = len(times)
    # Knot arithmetic runs on offsets from the first stamp so that dt
    # powers are built from small well-conditioned numbers even for
    # wall-clock epochs.
    offsets = times - times[0]
    dts = np.diff(offsets)

    qc_inv = np.linalg.inv(prior.qc)
    phi = _kron3(_phi_coef(dts), _EYE3)  # (n-1, 9, 9)
    q_inv = _kron3(_q_coef_inv(dts), qc_inv)  # (n-1, 9, 9)

    p0_inv = np.linalg.inv(prior.initial_cov)
    d_blocks = np.empty((n, STATE_DIM, STATE_DIM))
    d_blocks[0] = p0_inv
    d_blocks[1:] = q_inv

    diag = d_blocks.copy()
    if n > 1:
        phi_t = np.swapaxes(phi, -1, -2)
        diag[:-1] += phi_t @ d_blocks[1:] @ phi
        sub = -(d_blocks[1:] @ phi)
    else:
        sub = np.zeros((0, STATE_DIM, STATE_DIM))

    # Measurement information: position-only observations add the inverse
    # noise covariance to the position block of each knot.
    r_inv = np.linalg.inv(data.noise_covs)  # (n, 3, 3)
    diag[:, 0:3, 0:3] += r_inv

    # Prior mean at the knots (zero control input).
    mean0 = prior.initial_mean.reshape(3, 3)
    prior_states = (_phi_coef(offsets) @ mean0).reshape(n, STATE_DIM)

    # Right-hand side: inverse-kernel-weighted prior mean plus measurement
    # information, both applied factor by factor to stay O(N).
    u = prior_states.copy()
    if n > 1:
        u[1:] -= np.einsum("kij,kj->ki", phi, prior_states[:-1])
    w = np.einsum("kij,kj->ki", d_blocks, u)
    rhs = w.copy()
    if n > 1:
        rhs[:-1] -= np.einsum("kji,kj->ki", phi, w[1:])
    rhs[:, 0:3] += np.einsum("kij,kj->ki", r_inv, data.positions)

    ab = _assemble_banded(diag, sub)
    factor, info = lapack.dpbtrf(ab, lower=1)
    if info != 0:
        raise NumericalError(
            f"banded Cholesky failed at state block {(info - 1) // STATE_DIM}",
            block_index=(info - 1) // STATE_DIM,
        )
    solution, info = lapack.dpbtrs(factor, rhs.reshape(-1), lower=1)
    if info != 0:
        raise NumericalError(f"banded back-substitution failed (info={info})")

    return GPTrajectory(
        prior=prior,
        times=times.copy(),
        states=solution.reshape(n, STATE_DIM),
        prior_states=prior_states,
    )


def interpolate_many(traj: GPTrajectory, taus) -> np.ndarray:
    """Posterior mean states at query times ``taus``, returned as (M, 9).

    Each query combines the two bracketing knot states through the
    closed-form gain matrices of the constant-acceleration prior.  Both
    gains factor into a 3x3 coefficient pattern applied per axis, so the
    batch runs as small dense matmuls regardless of qc.

    Raises:
        OutOfSupportError: any query lies outside [times[0], times[-1]].
    """
    taus = np.asarray(taus, dtype=float)
    flat = taus.reshape(-1)
    times = traj.times
    if flat.size and (flat.min() < times[0] or flat.max() > times[-1]):
        bad = flat[(flat < times[0]) | (flat > times[-1])][0]
        raise OutOfSupportError(
            f"query time {bad} outside trajectory support [{times[0]}, {times[-1]}]"
        )
    n = len(times)
    i = np.clip(np.searchsorted(times, flat, side="right") - 1, 0, n - 2)

    dt1 = flat - times[i]
    dt2 = times[i + 1] - flat
    span = times[i + 1] - times[i]

    psi = _q_coef(dt1) @ np.swapaxes(_phi_coef(dt2), -1, -2) @ _q_coef_inv(span)
    lam = _phi_coef(dt1) - psi @ _phi_coef(span)

    dev = (traj.states - traj.prior_states).reshape(n, 3, 3)
    mean0 = traj.prior.initial_mean.reshape(3, 3)
    prior_at = _phi_coef(flat - times[0]) @ mean0
    out = prior_at + lam @ dev[i] + psi @ dev[i + 1]
    return out.reshape(taus.shape + (STATE_DIM,))


def interpolate(traj: GPTrajectory, tau: float) -> TrajectoryState:
    """Posterior mean state at a single interior time ``tau``.

    Queries at knot times return the stored knot state exactly; interior
    queries use the two-knot closed form.  No extrapolation: times outside
    the knot span raise.
    """
    tau = float(tau)
    times = traj.times
    if tau < times[0] or tau > times[-1]:
        raise OutOfSupportError(
            f"query time {tau} outside trajectory support [{times[0]}, {times[-1]}]"
        )
    idx = np.searchsorted(times, tau)
    if idx < len(times) and times[idx] == tau:
        return TrajectoryState.from_vector(tau, traj.states[idx])
    return TrajectoryState.from_vector(tau, interpolate_many(traj, [tau])[0])
