"""
Dual-function performance functionals: per-user SINR and sum rate of the
downlink, sensing beam patterns towards targets and over angle grids, the
beam-pattern matching error against a desired mask, and the scalarized ISAC
objective.
"""

from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from imisac.channel import GeometryContext, farfield_steering
from imisac.exception import (
    DimensionMismatch,
    EmptyGrid,
    NonFiniteObjective,
    NonPositiveReference,
    StreamMapInvalid,
)


class ScenarioResult(NamedTuple):
    """
    Metrics bundle of one evaluated (or optimized) configuration.
    - beampattern holds (angle in degrees, power) samples.
    - target_power holds the beam pattern towards every sensing target.
    - objective_trace is empty when no optimizer ran.
    """

    sum_rate: float
    per_user_sinr: Tuple[float, ...]
    per_user_rate: Tuple[float, ...]
    beampattern: Tuple[Tuple[float, float], ...]
    target_power: Tuple[float, ...]
    objective_trace: Tuple[float, ...]
    seed: int
    config_hash: str

    @property
    def worst_target_power(self) -> float:
        return min(self.target_power) if self.target_power else 0.0


def resolve_stream_map(
    num_users: int, num_streams: int, stream_to_user: Optional[Sequence[int]] = None
) -> np.ndarray:
    """
    Stream index serving each user. The default serves user u with stream u.
    The map must be one-to-one onto existing streams.
    """
    if stream_to_user is None:
        stream_to_user = range(num_users)
    streams = np.asarray(list(stream_to_user), dtype=int)
    if streams.shape != (num_users,):
        raise StreamMapInvalid(
            f"Expected one stream per user ({num_users}), got {streams.size}."
        )
    if np.any((streams < 0) | (streams >= num_streams)):
        raise StreamMapInvalid(f"Stream map {streams.tolist()} refers to missing streams.")
    if len(set(streams.tolist())) != streams.size:
        raise StreamMapInvalid(f"Stream map {streams.tolist()} reuses a stream.")
    return streams


def received_amplitudes(H: np.ndarray, E: np.ndarray, streams: np.ndarray) -> np.ndarray:
    """
    Z[u, v] = h_u^H e_{m(v)}: the amplitude of user v's stream at user u.
    """
    return np.asarray(H) @ np.asarray(E)[:, streams]


def sum_rate(
    H: np.ndarray,
    E: np.ndarray,
    noise_power: float,
    stream_to_user: Optional[Sequence[int]] = None,
) -> Tuple[float, np.ndarray]:
    """
    Sum rate in bits/s/Hz and the per-user SINR of the downlink y = H E x + n,
    treating every other user's stream as interference.
    """
    E = np.atleast_2d(np.asarray(E, dtype=complex).T).T
    H = np.atleast_2d(np.asarray(H, dtype=complex))
    if H.shape[1] != E.shape[0]:
        raise DimensionMismatch(
            f"Channel of shape {H.shape} does not match a {E.shape[0]}-element aperture."
        )
    if not noise_power > 0.0:
        raise NonFiniteObjective(f"Noise power must be positive, got {noise_power}.")
    streams = resolve_stream_map(H.shape[0], E.shape[1], stream_to_user)
    power = np.abs(received_amplitudes(H, E, streams)) ** 2
    signal = np.diag(power)
    interference = power.sum(axis=1) - signal
    sinr = signal / (interference + noise_power)
    return float(np.sum(np.log2(1.0 + sinr))), sinr


def per_user_rates(sinr: np.ndarray) -> np.ndarray:
    return np.log2(1.0 + np.asarray(sinr, dtype=float))


def beam_pattern(E: np.ndarray, steering: np.ndarray) -> float:
    """
    Power a^H E E^H a radiated towards the steering vector a.
    """
    E = np.atleast_2d(np.asarray(E, dtype=complex).T).T
    a = np.asarray(steering, dtype=complex)
    if a.shape != (E.shape[0],):
        raise DimensionMismatch(
            f"Steering vector of shape {a.shape} does not match {E.shape[0]} aperture rows."
        )
    return float(np.sum(np.abs(np.conj(a) @ E) ** 2))


def beam_patterns(E: np.ndarray, steering: np.ndarray) -> np.ndarray:
    """
    beam_pattern for every row of a (G x N) steering matrix.
    """
    E = np.atleast_2d(np.asarray(E, dtype=complex).T).T
    A = np.atleast_2d(np.asarray(steering, dtype=complex))
    if A.shape[1] != E.shape[0]:
        raise DimensionMismatch(
            f"Steering rows of length {A.shape[1]} do not match {E.shape[0]} aperture rows."
        )
    return np.sum(np.abs(np.conj(A) @ E) ** 2, axis=1)


def grid_steering(
    geometry: GeometryContext, azimuths: Sequence[float], elevation: float = 0.0
) -> np.ndarray:
    """
    Far-field steering vectors (G x N) over an azimuth grid in radians.
    """
    azimuths = np.asarray(azimuths, dtype=float).ravel()
    if azimuths.size == 0:
        raise EmptyGrid("Angle grid is empty.")
    return np.vstack(
        [farfield_steering(geometry.positions, (az, elevation), geometry.wavelength) for az in azimuths]
    )


def beam_pattern_grid(
    E: np.ndarray,
    geometry: GeometryContext,
    azimuths: Sequence[float],
    elevation: float = 0.0,
) -> np.ndarray:
    """
    Sampled beam pattern over an azimuth grid (radians).
    """
    return beam_patterns(E, grid_steering(geometry, azimuths, elevation))


def fit_mask_scale(pattern: np.ndarray, mask: np.ndarray) -> float:
    """
    Nonnegative least-squares scale alpha minimizing ||P - alpha m||^2.
    """
    energy = float(np.dot(mask, mask))
    if energy == 0.0:
        return 0.0
    return max(0.0, float(np.dot(pattern, mask)) / energy)


def mask_mse(pattern: np.ndarray, mask: np.ndarray) -> float:
    pattern = np.asarray(pattern, dtype=float)
    mask = np.asarray(mask, dtype=float)
    if pattern.size == 0:
        raise EmptyGrid("Angle grid is empty.")
    if mask.shape != pattern.shape:
        raise DimensionMismatch(
            f"Mask of shape {mask.shape} does not match a grid of {pattern.size} angles."
        )
    alpha = fit_mask_scale(pattern, mask)
    return float(np.mean((pattern - alpha * mask) ** 2))


def beampattern_mse(
    E: np.ndarray,
    angle_grid: Sequence[float],
    desired_mask: Sequence[float],
    geometry: GeometryContext,
    elevation: float = 0.0,
) -> float:
    """
    Mean squared error between the beam pattern over angle_grid (azimuths in
    radians) and the desired mask, after fitting the mask's nonnegative scale.
    """
    if len(angle_grid) == 0:
        raise EmptyGrid("Angle grid is empty.")
    pattern = beam_pattern_grid(E, geometry, angle_grid, elevation)
    return mask_mse(pattern, np.asarray(desired_mask, dtype=float))


def isac_objective(
    weight: float,
    rate: float,
    rate_ref: float,
    target_power: Sequence[float],
    power_ref: float,
) -> float:
    """
    J = w rate / rate_ref + (1 - w) min_t P_t / power_ref. Without targets the
    sensing term is zero.
    """
    if not rate_ref > 0.0 or not power_ref > 0.0:
        raise NonPositiveReference(
            f"Normalization references must be positive (rate_ref={rate_ref}, "
            f"power_ref={power_ref})."
        )
    worst = float(np.min(target_power)) if len(target_power) else 0.0
    return weight * rate / rate_ref + (1.0 - weight) * worst / power_ref


def isotropic_power(E: np.ndarray, steering: np.ndarray) -> float:
    """
    Beam pattern an isotropic radiator of the same total power would put
    towards a: ||E||_F^2 ||a||^2 / N.
    """
    E = np.atleast_2d(np.asarray(E, dtype=complex).T).T
    a = np.asarray(steering, dtype=complex)
    return float(np.sum(np.abs(E) ** 2) * np.sum(np.abs(a) ** 2) / E.shape[0])


def evaluate_scenario(
    E: np.ndarray,
    H: np.ndarray,
    noise_power: float,
    target_steering: np.ndarray,
    geometry: GeometryContext,
    beam_azimuths: Sequence[float] = (),
    stream_to_user: Optional[Sequence[int]] = None,
    objective_trace: Sequence[float] = (),
    seed: int = 0,
    config_hash: str = "",
) -> ScenarioResult:
    rate, sinr = sum_rate(H, E, noise_power, stream_to_user)
    targets = (
        beam_patterns(E, target_steering) if len(target_steering) else np.zeros(0)
    )
    if len(beam_azimuths):
        powers = beam_pattern_grid(E, geometry, beam_azimuths)
        samples = tuple(
            (float(np.degrees(az)), float(p)) for az, p in zip(beam_azimuths, powers)
        )
    else:
        samples = ()
    return ScenarioResult(
        sum_rate=rate,
        per_user_sinr=tuple(float(s) for s in sinr),
        per_user_rate=tuple(float(r) for r in per_user_rates(sinr)),
        beampattern=samples,
        target_power=tuple(float(p) for p in targets),
        objective_trace=tuple(float(f) for f in objective_trace),
        seed=int(seed),
        config_hash=config_hash,
    )
