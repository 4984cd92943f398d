"""
Element constraint families of intelligent-metasurface layers and the exact
projections onto them.

Every family also defines a parameter chart used by the optimizers: a real
parameter per element that realizes a feasible coefficient by construction.

  family            parameter  coefficient q(t)        dq/dt
  UNIT_MODULUS      phase t    exp(jt)                 j exp(jt)
  LORENTZIAN        angle t    (j + exp(jt)) / 2       j exp(jt) / 2
  AMPLITUDE_RANGE   amplitude  clip(t, lo, hi)         1
  AMPLITUDE_SET     amplitude  relaxed to its range; quantized by project()
"""

from enum import Enum
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[complex, float, np.ndarray]

# Outputs of the projections below sit within a few ulps of their set; inputs
# that close are returned untouched so that projecting twice is a no-op.
_ON_SET_ATOL = 8 * np.finfo(float).eps

LORENTZIAN_CENTER = 0.5j
LORENTZIAN_RADIUS = 0.5


class ConstraintKind(Enum):
    UNIT_MODULUS = "unit_modulus"
    AMPLITUDE_RANGE = "amplitude_range"
    AMPLITUDE_SET = "amplitude_set"
    LORENTZIAN = "lorentzian"


def project_unit_modulus(w: ArrayLike) -> np.ndarray:
    """
    Nearest unit-modulus point w/|w|. Zero has no phase; it maps to 1+0j.
    """
    w = np.asarray(w, dtype=complex)
    mag = np.abs(w)
    on_set = np.abs(mag - 1.0) <= _ON_SET_ATOL
    safe = np.where(mag > 0.0, mag, 1.0)
    out = np.where(mag > 0.0, w / safe, 1.0 + 0.0j)
    return np.where(on_set, w, out)


def project_lorentzian(w: ArrayLike) -> np.ndarray:
    """
    Nearest point on the Lorentzian circle {j/2 + exp(jt)/2}. The circle's
    center is equidistant from every point of it and maps to t = 0, i.e.
    (1+j)/2.
    """
    w = np.asarray(w, dtype=complex)
    offset = w - LORENTZIAN_CENTER
    dist = np.abs(offset)
    on_set = np.abs(dist - LORENTZIAN_RADIUS) <= _ON_SET_ATOL
    safe = np.where(dist > 0.0, dist, 1.0)
    direction = np.where(dist > 0.0, offset / safe, 1.0 + 0.0j)
    return np.where(on_set, w, LORENTZIAN_CENTER + LORENTZIAN_RADIUS * direction)


def project_amplitude(
    w: ArrayLike, lo: float = 0.0, hi: float = 1.0, levels: Sequence[float] = ()
) -> np.ndarray:
    """
    Amplitude-only projection. The phase of w is discarded and |w| is either
    clamped to [lo, hi] or, when levels are given, snapped to the nearest
    level with ties going to the smaller level.
    """
    mag = np.asarray(np.abs(np.asarray(w)))
    if len(levels) == 0:
        return np.clip(mag, lo, hi).astype(float)
    grid = np.sort(np.asarray(levels, dtype=float))
    # argmin returns the first minimum, i.e. the smaller level on ties.
    nearest = np.argmin(np.abs(mag[..., np.newaxis] - grid), axis=-1)
    return grid[nearest]


class ConstraintFamily(NamedTuple):
    """
    Feasible set of a layer's element coefficients.
    - kind selects the family.
    - lo, hi bound the amplitude for AMPLITUDE_RANGE (and the relaxation of
    AMPLITUDE_SET).
    - levels lists the allowed amplitudes of AMPLITUDE_SET.
    """

    kind: ConstraintKind
    lo: float = 0.0
    hi: float = 1.0
    levels: Tuple[float, ...] = ()

    @staticmethod
    def unit_modulus() -> "ConstraintFamily":
        return ConstraintFamily(ConstraintKind.UNIT_MODULUS)

    @staticmethod
    def lorentzian() -> "ConstraintFamily":
        return ConstraintFamily(ConstraintKind.LORENTZIAN)

    @staticmethod
    def amplitude_range(lo: float = 0.0, hi: float = 1.0) -> "ConstraintFamily":
        return ConstraintFamily(ConstraintKind.AMPLITUDE_RANGE, float(lo), float(hi))

    @staticmethod
    def amplitude_set(levels: Sequence[float]) -> "ConstraintFamily":
        levels = tuple(sorted(float(x) for x in levels))
        lo, hi = (levels[0], levels[-1]) if levels else (0.0, 0.0)
        return ConstraintFamily(ConstraintKind.AMPLITUDE_SET, lo, hi, levels)

    @property
    def is_amplitude(self) -> bool:
        return self.kind in (ConstraintKind.AMPLITUDE_RANGE, ConstraintKind.AMPLITUDE_SET)

    def hull_distance(self, w: ArrayLike) -> np.ndarray:
        """
        Distance of w from the convex hull of the family. Time averages of
        feasible coefficients (DC harmonics) can only reach points at
        distance zero.
        """
        w = np.asarray(w, dtype=complex)
        if self.kind == ConstraintKind.UNIT_MODULUS:
            return np.maximum(np.abs(w) - 1.0, 0.0)
        if self.kind == ConstraintKind.LORENTZIAN:
            return np.maximum(np.abs(w - LORENTZIAN_CENTER) - LORENTZIAN_RADIUS, 0.0)
        return np.abs(w - np.clip(w.real, self.lo, self.hi))

    def max_hull_magnitude(self, phases: np.ndarray, atol: float = 1e-9) -> float:
        """
        Largest r such that r exp(j phase) lies in the convex hull for every
        given phase.
        """
        phases = np.asarray(phases, dtype=float)
        if phases.size == 0 or self.kind == ConstraintKind.UNIT_MODULUS:
            return 1.0
        if self.kind == ConstraintKind.LORENTZIAN:
            # |r e^{jt} - j/2| <= 1/2  <=>  r <= sin t
            return float(max(np.min(np.sin(phases)), 0.0))
        if np.all(np.abs(np.exp(1j * phases) - 1.0) <= atol):
            return self.hi
        return 0.0

    def relaxation(self) -> "ConstraintFamily":
        """
        Continuous family the gradient optimizers work on. Only amplitude sets
        differ from their relaxation.
        """
        if self.kind == ConstraintKind.AMPLITUDE_SET:
            return ConstraintFamily.amplitude_range(self.lo, self.hi)
        return self

    def project(self, w: ArrayLike) -> np.ndarray:
        if self.kind == ConstraintKind.UNIT_MODULUS:
            return project_unit_modulus(w)
        if self.kind == ConstraintKind.LORENTZIAN:
            return project_lorentzian(w)
        if self.kind == ConstraintKind.AMPLITUDE_RANGE:
            return project_amplitude(w, self.lo, self.hi).astype(complex)
        return project_amplitude(w, levels=self.levels).astype(complex)

    def max_error(self, q: np.ndarray) -> float:
        """
        Largest distance of any coefficient in q from the feasible set.
        """
        q = np.asarray(q, dtype=complex).ravel()
        if q.size == 0:
            return 0.0
        if self.kind == ConstraintKind.UNIT_MODULUS:
            return float(np.max(np.abs(np.abs(q) - 1.0)))
        if self.kind == ConstraintKind.LORENTZIAN:
            radial = np.abs(q - LORENTZIAN_CENTER) - LORENTZIAN_RADIUS
            return float(np.max(np.abs(radial)))
        err = np.abs(q.imag)
        if self.kind == ConstraintKind.AMPLITUDE_RANGE:
            err = np.maximum(err, np.maximum(self.lo - q.real, q.real - self.hi))
        else:
            grid = np.asarray(self.levels, dtype=float)
            err = np.maximum(err, np.min(np.abs(q.real[:, None] - grid), axis=1))
        return float(np.max(np.maximum(err, 0.0)))

    def from_raw(self, phases: np.ndarray, amplitudes: np.ndarray) -> np.ndarray:
        """
        Interpret raw (phase, amplitude) control values under this family:
        phase families take the phase as their chart parameter and ignore the
        amplitude, amplitude families take the amplitude and ignore the phase.
        The result is projected, hence exactly feasible.
        """
        phases = np.asarray(phases, dtype=float)
        amplitudes = np.asarray(amplitudes, dtype=float)
        if self.is_amplitude:
            return self.project(amplitudes)
        return self.project(self.realize(phases))

    # Parameter chart

    def realize(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if self.kind == ConstraintKind.UNIT_MODULUS:
            return np.exp(1j * params)
        if self.kind == ConstraintKind.LORENTZIAN:
            return 0.5 * (1j + np.exp(1j * params))
        return np.clip(params, self.lo, self.hi).astype(complex)

    def derivative(self, params: np.ndarray) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        if self.kind == ConstraintKind.UNIT_MODULUS:
            return 1j * np.exp(1j * params)
        if self.kind == ConstraintKind.LORENTZIAN:
            return 0.5j * np.exp(1j * params)
        return np.ones(params.shape, dtype=complex)

    def to_params(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=complex)
        if self.kind == ConstraintKind.UNIT_MODULUS:
            return np.angle(q)
        if self.kind == ConstraintKind.LORENTZIAN:
            return np.angle(2.0 * q - 1j)
        return q.real.copy()

    def clip_params(self, params: np.ndarray) -> np.ndarray:
        """
        Keep amplitude parameters inside their range; angles are unconstrained.
        """
        if self.is_amplitude:
            return np.clip(params, self.lo, self.hi)
        return params

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """
        Uniformly random feasible coefficients: uniform phase for phase families,
        uniform amplitude (or uniformly chosen level) for amplitude families.
        """
        if self.kind == ConstraintKind.AMPLITUDE_SET:
            return np.asarray(self.levels)[rng.integers(0, len(self.levels), size)].astype(
                complex
            )
        if self.kind == ConstraintKind.AMPLITUDE_RANGE:
            return rng.uniform(self.lo, self.hi, size).astype(complex)
        return self.realize(rng.uniform(0.0, 2.0 * np.pi, size))

    def neutral(self, size: int) -> np.ndarray:
        """
        Deterministic feasible starting point: zero phase / chart angle, or the
        largest amplitude.
        """
        if self.is_amplitude:
            return np.full(size, self.hi, dtype=complex)
        return self.realize(np.zeros(size))
