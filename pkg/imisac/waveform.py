"""
Time modulation of the radiating layer.

Each element of the radiating layer cycles through P piecewise-constant
coefficients per modulation period. The radiated field then splits into
harmonics: harmonic k sees the element coefficients c_k, the k-th DFT bin of
the control sequences, in place of the static Q. Harmonics are indexed modulo
P. Only the radiating (last) layer may be modulated.
"""

from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from imisac.base_types import (
    ArchitectureSpec,
    BasebandProcessor,
    FeedingMatrix,
    PowerNormalization,
    ReconfigState,
)
from imisac.channel import Direction, farfield_steering
from imisac.constraints import ConstraintFamily
from imisac.exception import (
    DimensionMismatch,
    InfeasibleSplit,
    UnsupportedMultiLayerModulation,
)
from imisac.framework import build_feeds, compose
from imisac.logging_util import get_logger
from imisac.metrics import beam_pattern
from imisac.optimize import OptimizerConfig, ascend
from imisac.timers import timed

logger = get_logger(__name__)

SPLIT_HULL_ATOL = 1e-9


class TimeModulationPattern(NamedTuple):
    """
    sequences[n, p] is element n's coefficient during slot p of a period of
    `period` seconds.
    """

    sequences: np.ndarray
    period: float = 1e-6

    @property
    def num_elements(self) -> int:
        return int(self.sequences.shape[0])

    @property
    def num_slots(self) -> int:
        return int(self.sequences.shape[1])

    def max_error(self, family: ConstraintFamily) -> float:
        return family.max_error(self.sequences)

    @staticmethod
    def constant(q: np.ndarray, num_slots: int, period: float = 1e-6) -> "TimeModulationPattern":
        q = np.asarray(q, dtype=complex)
        return TimeModulationPattern(np.repeat(q[:, np.newaxis], num_slots, axis=1), period)


class HarmonicDecomposition(NamedTuple):
    """
    coefficients[n, k] is c_{n,k}, harmonic order k = 0..P-1.
    """

    coefficients: np.ndarray

    @property
    def num_orders(self) -> int:
        return int(self.coefficients.shape[1])

    def order(self, k: int) -> np.ndarray:
        return self.coefficients[:, k % self.num_orders]


def harmonic_coefficients(pattern: TimeModulationPattern) -> HarmonicDecomposition:
    """
    c_{n,k} = (1/P) sum_p q_n[p] exp(-j 2 pi k p / P).
    """
    sequences = np.asarray(pattern.sequences, dtype=complex)
    return HarmonicDecomposition(np.fft.fft(sequences, axis=1) / pattern.num_slots)


def _upstream(
    spec: ArchitectureSpec,
    feeds: Sequence[FeedingMatrix],
    V: BasebandProcessor,
    state: Optional[ReconfigState],
) -> np.ndarray:
    """
    Z = T_{L-1} (prod_{l<L-1} Q_l T_l) V, the field reaching the radiating
    layer's elements before their coefficients apply.
    """
    static = state.coefficients[:-1] if state is not None else tuple(
        layer.constraint.neutral(layer.num_elements) for layer in spec.layers[:-1]
    )
    Y = compose(feeds[:-1], np.asarray(V.matrix, dtype=complex), static)
    return feeds[-1].matrix @ Y


def harmonic_matrices(
    decomp: HarmonicDecomposition,
    feeds: Sequence[FeedingMatrix],
    V: BasebandProcessor,
    spec: ArchitectureSpec,
    state: Optional[ReconfigState] = None,
    modulated_layer: Optional[int] = None,
) -> List[np.ndarray]:
    """
    Effective transmit matrix of every harmonic order. The static layers take
    their coefficients from state (neutral by default). Under END_TO_END
    normalization all harmonics share one scale, chosen so that the power
    summed over harmonics equals ||V||_F^2.
    """
    last = spec.num_layers - 1
    if modulated_layer is not None and modulated_layer not in (-1, last):
        raise UnsupportedMultiLayerModulation(
            f"Layer {modulated_layer} cannot be time-modulated; only the radiating "
            f"layer {last} can."
        )
    Z = _upstream(spec, feeds, V, state)
    c = decomp.coefficients
    if c.shape[0] != Z.shape[0]:
        raise DimensionMismatch(
            f"{c.shape[0]} modulated sequences for {Z.shape[0]} radiating elements.",
            layer=last,
        )
    matrices = [c[:, k, np.newaxis] * Z for k in range(decomp.num_orders)]
    if spec.power_normalization == PowerNormalization.END_TO_END:
        total = np.sqrt(sum(float(np.sum(np.abs(E) ** 2)) for E in matrices))
        if total > 0.0:
            scale = np.linalg.norm(V.matrix) / total
            matrices = [E * scale for E in matrices]
    return matrices


def harmonic_beam_pattern(
    decomp: HarmonicDecomposition,
    feeds: Sequence[FeedingMatrix],
    V: BasebandProcessor,
    spec: ArchitectureSpec,
    k: int,
    steering: np.ndarray,
    state: Optional[ReconfigState] = None,
    modulated_layer: Optional[int] = None,
) -> float:
    """
    Beam pattern of harmonic k towards the steering vector.
    """
    matrices = harmonic_matrices(decomp, feeds, V, spec, state, modulated_layer)
    return beam_pattern(matrices[k % decomp.num_orders], steering)


class HarmonicLeakage(NamedTuple):
    """
    Cross-beam leakage between a communication and a sensing harmonic.
    - sense_into_comm: power of the sensing harmonic towards the user.
    - comm_into_sense: power of the communication harmonic towards the target.
    """

    comm_power: float
    sense_power: float
    sense_into_comm: float
    comm_into_sense: float


def harmonic_leakage(
    decomp: HarmonicDecomposition,
    feeds: Sequence[FeedingMatrix],
    V: BasebandProcessor,
    spec: ArchitectureSpec,
    comm_steering: np.ndarray,
    sense_steering: np.ndarray,
    comm_order: int = 0,
    sense_order: int = 1,
    state: Optional[ReconfigState] = None,
) -> HarmonicLeakage:
    matrices = harmonic_matrices(decomp, feeds, V, spec, state)
    E_comm = matrices[comm_order % decomp.num_orders]
    E_sense = matrices[sense_order % decomp.num_orders]
    return HarmonicLeakage(
        comm_power=beam_pattern(E_comm, comm_steering),
        sense_power=beam_pattern(E_sense, sense_steering),
        sense_into_comm=beam_pattern(E_sense, comm_steering),
        comm_into_sense=beam_pattern(E_comm, sense_steering),
    )


class SplitDesign(NamedTuple):
    """
    A dual-function time-modulation pattern with the coefficient profiles it
    achieves: dc (k = 0, communication) and fundamental (k = 1, sensing).
    """

    pattern: TimeModulationPattern
    dc: np.ndarray
    fundamental: np.ndarray
    comm_error: float
    sense_gain: float


class _SplitObjective:
    """
    f = -w_c ||c_0 - t||^2 / N + w_s |a^H (c_1 o Z)|^2 / bound over the chart
    parameters of every (element, slot) pair, where bound is the largest
    harmonic beam pattern any |c_1| <= 1 profile could reach.
    """

    def __init__(
        self,
        family: ConstraintFamily,
        Z: np.ndarray,
        steering: np.ndarray,
        target_dc: np.ndarray,
        comm_weight: float,
        sense_weight: float,
        num_slots: int,
    ):
        self.family = family
        self.Z = Z
        self.a = steering
        self.target = target_dc
        self.wc = comm_weight
        self.ws = sense_weight
        self.shape = (Z.shape[0], num_slots)
        bound = float(np.sum((np.abs(steering) @ np.abs(Z)) ** 2))
        self.bound = bound if bound > 0.0 else 1.0
        self.ramp = np.exp(2j * np.pi * np.arange(num_slots) / num_slots)

    def sequences(self, x: np.ndarray) -> np.ndarray:
        return self.family.realize(x.reshape(self.shape))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return self.family.clip_params(x)

    def terms(self, q: np.ndarray):
        c = np.fft.fft(q, axis=1) / self.shape[1]
        s = np.conj(self.a) @ (c[:, 1 % self.shape[1], np.newaxis] * self.Z)
        comm_error = float(np.sum(np.abs(c[:, 0] - self.target) ** 2)) / self.shape[0]
        gain = float(np.sum(np.abs(s) ** 2))
        return c, s, comm_error, gain

    def value(self, x: np.ndarray) -> float:
        _, _, comm_error, gain = self.terms(self.sequences(x))
        return -self.wc * comm_error + self.ws * gain / self.bound

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        params = x.reshape(self.shape)
        q = self.family.realize(params)
        c, s, comm_error, gain = self.terms(q)
        n, P = self.shape
        g0 = -2.0 * self.wc / n * (c[:, 0] - self.target)
        g1 = 2.0 * self.ws / self.bound * self.a * (np.conj(self.Z) @ s)
        grad_q = (g0[:, np.newaxis] + g1[:, np.newaxis] * self.ramp) / P
        grad = np.real(np.conj(grad_q) * self.family.derivative(params))
        return -self.wc * comm_error + self.ws * gain / self.bound, grad.ravel()


@timed
def design_split_pattern(
    spec: ArchitectureSpec,
    comm_phases: np.ndarray,
    sense_direction: Direction,
    P: int,
    seed: int,
    feeds: Optional[Sequence[FeedingMatrix]] = None,
    V: Optional[BasebandProcessor] = None,
    comm_weight: float = 1.0,
    sense_weight: float = 1.0,
    comm_magnitude: float = 1.0,
    cfg: Optional[OptimizerConfig] = None,
    period: float = 1e-6,
) -> SplitDesign:
    """
    Design control sequences of the radiating layer whose DC coefficients
    realize comm_magnitude * exp(j comm_phases) and whose first harmonic
    steers towards sense_direction. Refinement runs projected gradient ascent
    from a constant pattern, a linear phase ramp matched to the sensing
    direction and a random pattern, keeping the best. With sense_weight == 0
    the constant pattern is returned as is.
    Targets outside the convex hull of the element family raise
    InfeasibleSplit.
    """
    layer = spec.layers[-1]
    family = layer.constraint.relaxation()
    n = layer.num_elements
    if P < 2:
        raise DimensionMismatch(
            f"A split needs at least two slots per period, got {P}.", layer=spec.num_layers - 1
        )
    phases = np.asarray(comm_phases, dtype=float).ravel()
    if phases.shape != (n,):
        raise DimensionMismatch(
            f"{phases.size} communication phases for {n} radiating elements.",
            layer=spec.num_layers - 1,
        )
    target = comm_magnitude * np.exp(1j * phases)
    # DC coefficients are slot averages, so they stay in the convex hull
    if np.max(family.hull_distance(target)) > SPLIT_HULL_ATOL:
        raise InfeasibleSplit(comm_magnitude, family.max_hull_magnitude(phases))
    feeds = list(feeds) if feeds is not None else build_feeds(spec)
    V = V if V is not None else BasebandProcessor.for_architecture(spec)
    steering = farfield_steering(layer.positions, sense_direction, spec.wavelength)
    Z = _upstream(spec, feeds, V, None)
    objective = _SplitObjective(family, Z, steering, target, comm_weight, sense_weight, P)

    constant = family.project(target)
    starts = [family.to_params(np.repeat(constant[:, np.newaxis], P, axis=1))]
    if sense_weight > 0.0:
        ramp = np.angle(steering)[:, np.newaxis] + 2.0 * np.pi * np.arange(P) / P
        rng = np.random.default_rng(seed)
        starts.append(family.to_params(family.project(np.exp(1j * ramp))))
        starts.append(family.to_params(family.sample(rng, n * P).reshape(n, P)))
    cfg = cfg or OptimizerConfig(max_iters=300, tolerance=1e-10)

    best_x, best_f = starts[0].ravel(), objective.value(starts[0].ravel())
    if sense_weight > 0.0:
        for x0 in starts:
            run = ascend(objective, x0.ravel(), cfg)
            f = objective.value(run.x)
            if f > best_f:
                best_x, best_f = run.x, f

    sequences = layer.constraint.project(objective.sequences(best_x))
    pattern = TimeModulationPattern(sequences, period)
    c = harmonic_coefficients(pattern).coefficients
    _, _, comm_error, gain = objective.terms(sequences)
    logger.debug(f"Split pattern: DC error {comm_error:.3e}, harmonic gain {gain:.4g}.")
    return SplitDesign(
        pattern=pattern,
        dc=c[:, 0],
        fundamental=c[:, 1 % P],
        comm_error=comm_error,
        sense_gain=gain,
    )
