"""
Propagation operators: far- and near-field steering vectors, inter-layer
diffraction, waveguide and carrier feeds, and stochastic user channels.

Phase convention: a wave travelling a distance d picks up exp(+j 2 pi d / lambda).
A steering vector a holds the conjugate of the phases a wavefront picks up on
its way to the aperture elements, so the field radiated by aperture weights e
towards a is a^H e and a line-of-sight user row is conj(a) times its path gain.
"""

from enum import Enum
from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from imisac.base_types import ArchitectureSpec, FeedingMatrix, FeedingTopology
from imisac.exception import (
    CoincidentSource,
    InvalidWavelength,
    NonPositiveSpacing,
    UnassignedElement,
)
from imisac.logging_util import get_logger
from imisac.timers import timed

logger = get_logger(__name__)

Direction = Union[Tuple[float, float], Sequence[float]]

COINCIDENT_DISTANCE = 1e-9
_PLANE_ATOL = 1e-12


class ChannelModel(Enum):
    LOS = "los"
    RICIAN = "rician"
    RAYLEIGH = "rayleigh"


class FieldRegime(Enum):
    FAR_FIELD = "far_field"
    NEAR_FIELD = "near_field"


def _check_wavelength(wavelength: float) -> None:
    if not wavelength > 0.0:
        raise InvalidWavelength(f"Wavelength must be positive, got {wavelength}.")


def direction_vector(azimuth: float, elevation: float = 0.0) -> np.ndarray:
    """
    Unit vector of a direction. Azimuth is measured from the array normal (+z)
    towards +x, elevation from the xz plane towards +y; (0, 0) is broadside.
    """
    return np.array(
        [
            np.sin(azimuth) * np.cos(elevation),
            np.sin(elevation),
            np.cos(azimuth) * np.cos(elevation),
        ]
    )


class GeometryContext(NamedTuple):
    """
    Aperture geometry of the radiating layer.
    """

    positions: np.ndarray
    wavelength: float

    @property
    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    @property
    def aperture_size(self) -> float:
        """
        Largest distance between two elements.
        """
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return float(np.sqrt(np.max(np.sum(diff ** 2, axis=-1))))

    @property
    def rayleigh_distance(self) -> float:
        return 2.0 * self.aperture_size ** 2 / self.wavelength

    def regime(self, point: np.ndarray) -> FieldRegime:
        distance = float(np.linalg.norm(np.asarray(point, dtype=float) - self.center))
        if distance < self.rayleigh_distance:
            return FieldRegime.NEAR_FIELD
        return FieldRegime.FAR_FIELD

    @staticmethod
    def from_spec(spec: ArchitectureSpec) -> "GeometryContext":
        return GeometryContext(spec.aperture_positions, spec.wavelength)


def farfield_steering(
    positions: np.ndarray, direction: Direction, wavelength: float
) -> np.ndarray:
    """
    Plane-wave steering vector a_n = exp(j 2 pi p_n . u / lambda) for the
    direction (azimuth, elevation) in radians.
    """
    _check_wavelength(wavelength)
    u = direction_vector(*direction)
    return np.exp(2j * np.pi * (np.asarray(positions, dtype=float) @ u) / wavelength)


def nearfield_steering(
    positions: np.ndarray, source_point: Sequence[float], wavelength: float
) -> np.ndarray:
    """
    Spherical-wave steering vector a_n = exp(-j 2 pi (d_n - d_0) / lambda) where
    d_n is the exact distance from element n to the source and element 0 is the
    phase reference.
    """
    _check_wavelength(wavelength)
    positions = np.asarray(positions, dtype=float)
    dist = np.linalg.norm(positions - np.asarray(source_point, dtype=float), axis=1)
    if np.min(dist) < COINCIDENT_DISTANCE:
        raise CoincidentSource(
            f"Source point {list(source_point)} coincides with element "
            f"{int(np.argmin(dist))}."
        )
    return np.exp(-2j * np.pi * (dist - dist[0]) / wavelength)


def steering_toward(
    geometry: GeometryContext, point: Sequence[float], regime: Optional[FieldRegime] = None
) -> np.ndarray:
    """
    Steering vector towards a point, spherical inside the Rayleigh distance and
    planar (towards the point's direction from the aperture center) beyond it.
    """
    point = np.asarray(point, dtype=float)
    regime = regime or geometry.regime(point)
    if regime == FieldRegime.NEAR_FIELD:
        return nearfield_steering(geometry.positions, point, geometry.wavelength)
    rel = point - geometry.center
    rel = rel / np.linalg.norm(rel)
    azimuth = np.arctan2(rel[0], rel[2])
    elevation = np.arcsin(np.clip(rel[1], -1.0, 1.0))
    return farfield_steering(geometry.positions, (azimuth, elevation), geometry.wavelength)


def diffraction_kernel(
    distance: np.ndarray, cos_angle: np.ndarray, wavelength: float, element_area: float
) -> np.ndarray:
    """
    Rayleigh-Sommerfeld transmission coefficient between two elements:
    (A cos(chi) / d) (1 / (2 pi d) - j / lambda) exp(j 2 pi d / lambda).
    """
    return (
        element_area
        * cos_angle
        / distance
        * (1.0 / (2.0 * np.pi * distance) - 1j / wavelength)
        * np.exp(2j * np.pi * distance / wavelength)
    )


@timed
def sim_diffraction_matrix(
    from_positions: np.ndarray,
    to_positions: np.ndarray,
    wavelength: float,
    element_area: float,
    layer_index: int = 0,
) -> FeedingMatrix:
    """
    Dense feeding matrix from the elements (or feed antennas) at from_positions
    to the elements at to_positions. Both sets must lie in planes normal to z,
    with every destination above (at larger z than) every source; chi is
    measured from that normal.
    """
    _check_wavelength(wavelength)
    src = np.asarray(from_positions, dtype=float)
    dst = np.asarray(to_positions, dtype=float)
    dz = dst[:, None, 2] - src[None, :, 2]
    if not np.all(dz > _PLANE_ATOL):
        raise NonPositiveSpacing(
            f"Layer {layer_index} is not separated from its source plane by a "
            f"positive spacing."
        )
    distance = np.linalg.norm(dst[:, None, :] - src[None, :, :], axis=-1)
    matrix = diffraction_kernel(distance, dz / distance, wavelength, element_area)
    return FeedingMatrix(layer_index, matrix, FeedingTopology.DENSE_DIFFRACTION)


def waveguide_feed(
    spec: ArchitectureSpec,
    attenuation: Optional[float] = None,
    phase_constant: Optional[float] = None,
    layer_index: int = 0,
) -> FeedingMatrix:
    """
    Block-diagonal feed of a waveguide-fed layer: entry (n, k) is
    exp(-(alpha + j beta) rho_n) when element n sits on waveguide k at arclength
    rho_n, zero otherwise. alpha and beta default to the architecture's microstrip
    parameters.
    """
    layer = spec.layers[layer_index]
    alpha = spec.waveguide_attenuation if attenuation is None else attenuation
    beta = spec.waveguide_phase_constant if phase_constant is None else phase_constant
    if layer.waveguide is None or layer.arclength is None:
        raise UnassignedElement(
            f"Layer {layer_index} declares no element-to-waveguide assignment."
        )
    guide = np.asarray(layer.waveguide, dtype=int)
    unassigned = np.flatnonzero((guide < 0) | (guide >= spec.num_rf_chains))
    if unassigned.size:
        raise UnassignedElement(
            f"Elements {unassigned.tolist()} of layer {layer_index} sit on no waveguide."
        )
    matrix = np.zeros((layer.num_elements, spec.num_rf_chains), dtype=complex)
    rho = np.asarray(layer.arclength, dtype=float)
    matrix[np.arange(layer.num_elements), guide] = np.exp(-(alpha + 1j * beta) * rho)
    return FeedingMatrix(layer_index, matrix, FeedingTopology.BLOCK_DIAGONAL_WAVEGUIDE)


def scalar_carrier_feed(num_elements: int, attenuation: complex = 1.0) -> FeedingMatrix:
    """
    Carrier illumination collapsed into one complex attenuation factor shared by
    every element.
    """
    matrix = np.full((num_elements, 1), complex(attenuation), dtype=complex)
    return FeedingMatrix(0, matrix, FeedingTopology.SCALAR_CARRIER)


class ChannelSet(NamedTuple):
    """
    Everything the metrics need about the propagation environment.
    - H: U x N user channel (row u maps aperture weights to user u's sample).
    - target_steering: T x N steering vectors towards the sensing targets.
    - noise_power: per-user AWGN power sigma^2 in watts.
    """

    H: np.ndarray
    target_steering: np.ndarray
    noise_power: float
    wavelength: float
    field_regime: FieldRegime

    @property
    def num_users(self) -> int:
        return int(self.H.shape[0])


def free_space_gain(distance: float, wavelength: float) -> float:
    return wavelength / (4.0 * np.pi * distance)


def target_steering(
    geometry: GeometryContext,
    directions: Sequence[Direction] = (),
    points: Sequence[Sequence[float]] = (),
) -> np.ndarray:
    """
    Stack of steering vectors towards target directions (far field) followed by
    target points (spherical or planar depending on their range).
    """
    rows = [farfield_steering(geometry.positions, d, geometry.wavelength) for d in directions]
    rows += [steering_toward(geometry, p) for p in points]
    if not rows:
        return np.zeros((0, geometry.positions.shape[0]), dtype=complex)
    return np.vstack(rows)


@timed
def generate_user_channels(
    geometry: GeometryContext,
    users: Sequence[Sequence[float]],
    model: ChannelModel,
    seed: int,
    rician_k: float = 10.0,
    noise_power: float = 1.0,
    pathloss: bool = True,
    target_directions: Sequence[Direction] = (),
    target_points: Sequence[Sequence[float]] = (),
) -> ChannelSet:
    """
    Draw the user channel matrix for users at the given positions (meters).
    The line-of-sight row of user u is g_u conj(a_u) with a_u the steering
    vector towards the user and g_u = lambda / (4 pi d_u) when pathloss is on
    (1 otherwise). Rician rows mix it with i.i.d. CN(0, g_u^2) scattering
    according to the K-factor; Rayleigh rows are pure scattering.
    """
    users = np.atleast_2d(np.asarray(users, dtype=float))
    rng = np.random.default_rng(seed)
    num_users, num_elements = users.shape[0], geometry.positions.shape[0]
    regimes = [geometry.regime(p) for p in users]
    H = np.zeros((num_users, num_elements), dtype=complex)
    for u, point in enumerate(users):
        distance = float(np.linalg.norm(point - geometry.center))
        gain = free_space_gain(distance, geometry.wavelength) if pathloss else 1.0
        scatter = (
            rng.standard_normal(num_elements) + 1j * rng.standard_normal(num_elements)
        ) / np.sqrt(2.0)
        los = np.conj(steering_toward(geometry, point, regimes[u]))
        if model == ChannelModel.LOS:
            H[u] = gain * los
        elif model == ChannelModel.RAYLEIGH:
            H[u] = gain * scatter
        else:
            H[u] = gain * (
                np.sqrt(rician_k / (rician_k + 1.0)) * los
                + np.sqrt(1.0 / (rician_k + 1.0)) * scatter
            )
    regime = (
        FieldRegime.NEAR_FIELD
        if FieldRegime.NEAR_FIELD in regimes
        else FieldRegime.FAR_FIELD
    )
    logger.debug(
        f"Generated {model.value} channels for {num_users} users "
        f"({regime.value}, Rayleigh distance {geometry.rayleigh_distance:.3f} m)."
    )
    return ChannelSet(
        H=H,
        target_steering=target_steering(geometry, target_directions, target_points),
        noise_power=noise_power,
        wavelength=geometry.wavelength,
        field_regime=regime,
    )
