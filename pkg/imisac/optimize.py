"""
Constrained beamforming over the element coefficients of every layer.

Coefficients are optimized through the real parameter chart of their
constraint family (see imisac.constraints): phases for unit-modulus and
Lorentzian elements, amplitudes for amplitude-only elements. Gradients are
propagated analytically through E = Q_{L-1} T_{L-1} ... Q_0 T_0 V; a complex
gradient G of a real function f of E is defined by df = Re sum(conj(G) dE).
"""

from enum import Enum
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from imisac.base_types import (
    ArchitectureSpec,
    BasebandProcessor,
    FeedingMatrix,
    PowerNormalization,
    ReconfigState,
    Violation,
)
from imisac.channel import ChannelSet, GeometryContext
from imisac.constraints import (  # noqa F401 re-exported projections
    ConstraintKind,
    project_amplitude,
    project_lorentzian,
    project_unit_modulus,
)
from imisac.exception import (
    EmptyGrid,
    NonFiniteObjective,
    ScenarioValidationError,
    SingularEffectiveChannel,
    UnsupportedArchitecture,
)
from imisac.framework import (
    build_effective_matrix,
    build_feeds,
    layer_product,
    normalize_radiated,
)
from imisac.logging_util import get_logger
from imisac.metrics import (
    beam_patterns,
    fit_mask_scale,
    grid_steering,
    isac_objective,
    resolve_stream_map,
    sum_rate,
)
from imisac.timers import hierarchical_timer, timed

logger = get_logger(__name__)

STEP_UNDERFLOW = 1e-12
SINGULAR_CONDITION = 1e12
WATER_FILLING_TOLERANCE = 1e-10
POLISH_SWEEPS = 3


class ObjectiveKind(Enum):
    SUM_RATE = "sum_rate"
    BEAM_PATTERN_GAIN = "beam_pattern_gain"
    WEIGHTED_ISAC = "weighted_isac"
    BEAMPATTERN_MSE = "beampattern_mse"


class StepRule(Enum):
    FIXED = "fixed"
    BACKTRACKING = "backtracking"


class TerminationReason(Enum):
    CONVERGED = "converged"
    """
    The relative objective change fell below the tolerance.
    """

    MAX_ITERS = "max_iters"

    STALLED = "stalled"
    """
    Backtracking shrank the step below 1e-12 without sufficient increase.
    Counts as converged.
    """


class BeampatternMask(NamedTuple):
    """
    Desired beam pattern sampled over an angle grid, with the steering vectors
    of the grid (G x N).
    """

    steering: np.ndarray
    desired: np.ndarray

    @staticmethod
    def from_angles(
        geometry: GeometryContext,
        azimuths: Sequence[float],
        desired: Sequence[float],
        elevation: float = 0.0,
    ) -> "BeampatternMask":
        return BeampatternMask(
            steering=grid_steering(geometry, azimuths, elevation),
            desired=np.asarray(desired, dtype=float),
        )


class OptimizerConfig(NamedTuple):
    """
    Settings of the reconfiguration optimizers.
    - weight is the communication weight w of WEIGHTED_ISAC.
    - step_size is the fixed step for StepRule.FIXED and the largest parameter
    change of the first backtracking trial otherwise.
    - armijo_c and shrink are the backtracking constants c and tau.
    - tolerance bounds the relative objective change at convergence.
    - num_starts counts the initializations of gradient_ascent (the given
    state plus random ones); the best run is kept.
    - inner_iters and regularized drive alternating_optimize: gradient
    iterations per round and whether regularized zero-forcing may stand in
    for an ill-conditioned effective channel.
    - rate_ref and power_ref normalize WEIGHTED_ISAC.
    - mask is required by BEAMPATTERN_MSE.
    """

    objective: ObjectiveKind = ObjectiveKind.SUM_RATE
    weight: float = 0.5
    max_iters: int = 200
    step_rule: StepRule = StepRule.BACKTRACKING
    step_size: float = 0.5
    armijo_c: float = 1e-4
    shrink: float = 0.5
    tolerance: float = 1e-9
    seed: int = 0
    num_starts: int = 4
    inner_iters: int = 25
    regularized: bool = True
    rate_ref: float = 1.0
    power_ref: float = 1.0
    stream_to_user: Optional[Tuple[int, ...]] = None
    mask: Optional[BeampatternMask] = None

    def violations(self) -> List[Violation]:
        checks = [
            ("max_iters", self.max_iters >= 1, "must be at least 1"),
            ("tolerance", self.tolerance > 0.0, "must be positive"),
            ("weight", 0.0 <= self.weight <= 1.0, "must lie in [0, 1]"),
            ("step_size", self.step_size > 0.0, "must be positive"),
            ("armijo_c", 0.0 < self.armijo_c < 1.0, "must lie in (0, 1)"),
            ("shrink", 0.0 < self.shrink < 1.0, "must lie in (0, 1)"),
            ("num_starts", self.num_starts >= 1, "must be at least 1"),
            ("inner_iters", self.inner_iters >= 1, "must be at least 1"),
        ]
        return [Violation(field, msg) for field, ok, msg in checks if not ok]


class OptimizationTrace(NamedTuple):
    """
    Outcome of an optimizer run.
    - objective_trace holds the objective after every accepted iterate (or
    outer round); it is nondecreasing under backtracking. For amplitude-set
    layers it tracks the continuous relaxation.
    - final_objective is the objective of the returned, exactly feasible
    state and baseband matrix.
    """

    objective_trace: Tuple[float, ...]
    state: ReconfigState
    baseband: BasebandProcessor
    converged: bool
    iterations: int
    termination: TerminationReason
    final_objective: float


# Gradients with respect to E


def sum_rate_gradient(
    H: np.ndarray, E: np.ndarray, noise_power: float, streams: np.ndarray
) -> np.ndarray:
    Z = H @ E[:, streams]
    power = np.abs(Z) ** 2
    total = power.sum(axis=1) + noise_power
    interference = total - np.diag(power)
    off_diagonal = 1.0 - np.eye(len(streams))
    W = 1.0 / total[:, np.newaxis] - off_diagonal / interference[:, np.newaxis]
    G = np.zeros(E.shape, dtype=complex)
    G[:, streams] = (2.0 / np.log(2.0)) * (H.conj().T @ (W * Z))
    return G


def beam_pattern_gradient(E: np.ndarray, steering: np.ndarray) -> np.ndarray:
    """
    Gradient 2 a a^H E of the beam pattern a^H E E^H a.
    """
    return 2.0 * np.outer(steering, np.conj(steering) @ E)


def mask_mse_gradient(E: np.ndarray, mask: BeampatternMask) -> Tuple[float, np.ndarray]:
    """
    Matching error and its gradient. The fitted scale is itself optimal, so it
    is held fixed when differentiating.
    """
    A = mask.steering
    B = np.conj(A) @ E
    pattern = np.sum(np.abs(B) ** 2, axis=1)
    alpha = fit_mask_scale(pattern, mask.desired)
    residual = pattern - alpha * mask.desired
    coef = 2.0 * residual / residual.size
    return float(np.mean(residual ** 2)), 2.0 * A.T @ (coef[:, np.newaxis] * B)


class MatrixObjective:
    """
    Objective of OptimizerConfig as a function of the effective transmit
    matrix. BEAMPATTERN_MSE is negated so that every objective is maximized.
    """

    def __init__(self, cfg: OptimizerConfig, channels: ChannelSet):
        self.kind = cfg.objective
        self.cfg = cfg
        self.H = np.asarray(channels.H, dtype=complex)
        self.noise_power = channels.noise_power
        self.targets = np.atleast_2d(np.asarray(channels.target_steering, dtype=complex))
        uses_targets = (ObjectiveKind.BEAM_PATTERN_GAIN, ObjectiveKind.WEIGHTED_ISAC)
        if self.kind in uses_targets and self.targets.shape[0] == 0:
            raise EmptyGrid(f"The {self.kind.value} objective needs at least one target.")
        if self.kind == ObjectiveKind.BEAMPATTERN_MSE and cfg.mask is None:
            raise EmptyGrid("The beampattern_mse objective needs a desired mask.")
        if self.kind == ObjectiveKind.WEIGHTED_ISAC:
            # Validates the references.
            isac_objective(cfg.weight, 0.0, cfg.rate_ref, [0.0], cfg.power_ref)

    def _streams(self, E: np.ndarray) -> np.ndarray:
        return resolve_stream_map(self.H.shape[0], E.shape[1], self.cfg.stream_to_user)

    def _worst_target(self, E: np.ndarray) -> Tuple[float, int]:
        powers = beam_patterns(E, self.targets)
        t = int(np.argmin(powers))
        return float(powers[t]), t

    def value(self, E: np.ndarray) -> float:
        if self.kind == ObjectiveKind.SUM_RATE:
            return sum_rate(self.H, E, self.noise_power, self.cfg.stream_to_user)[0]
        if self.kind == ObjectiveKind.BEAM_PATTERN_GAIN:
            return self._worst_target(E)[0]
        if self.kind == ObjectiveKind.BEAMPATTERN_MSE:
            return -mask_mse_gradient(E, self.cfg.mask)[0]
        rate = sum_rate(self.H, E, self.noise_power, self.cfg.stream_to_user)[0]
        cfg = self.cfg
        return isac_objective(
            cfg.weight, rate, cfg.rate_ref, [self._worst_target(E)[0]], cfg.power_ref
        )

    def value_and_grad(self, E: np.ndarray) -> Tuple[float, np.ndarray]:
        if self.kind == ObjectiveKind.BEAMPATTERN_MSE:
            mse, grad = mask_mse_gradient(E, self.cfg.mask)
            return -mse, -grad
        if self.kind == ObjectiveKind.BEAM_PATTERN_GAIN:
            power, t = self._worst_target(E)
            return power, beam_pattern_gradient(E, self.targets[t])
        rate_grad = sum_rate_gradient(self.H, E, self.noise_power, self._streams(E))
        if self.kind == ObjectiveKind.SUM_RATE:
            return self.value(E), rate_grad
        cfg = self.cfg
        power, t = self._worst_target(E)
        grad = cfg.weight / cfg.rate_ref * rate_grad + (
            1.0 - cfg.weight
        ) / cfg.power_ref * beam_pattern_gradient(E, self.targets[t])
        return self.value(E), grad


class ParameterObjective:
    """
    A matrix objective seen as a function of the stacked real chart parameters
    of all layers, with the baseband matrix and feeds held fixed. Amplitude
    sets are optimized over their continuous relaxation.
    Calling the object returns the objective and its gradient.
    """

    def __init__(
        self,
        spec: ArchitectureSpec,
        V: BasebandProcessor,
        feeds: Sequence[FeedingMatrix],
        objective: MatrixObjective,
    ):
        self.spec = spec
        self.V = np.asarray(V.matrix, dtype=complex)
        self.feeds = list(feeds)
        self.objective = objective
        self.families = [layer.constraint.relaxation() for layer in spec.layers]
        self.bounds = np.cumsum([0] + spec.elements_per_layer)

    @property
    def size(self) -> int:
        return int(self.bounds[-1])

    def split(self, x: np.ndarray) -> List[np.ndarray]:
        return [x[a:b] for a, b in zip(self.bounds[:-1], self.bounds[1:])]

    def pack(self, state: ReconfigState) -> np.ndarray:
        return np.concatenate(
            [f.to_params(q) for f, q in zip(self.families, state.coefficients)]
        )

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate(
            [f.clip_params(p) for f, p in zip(self.families, self.split(x))]
        )

    def state(self, x: np.ndarray) -> ReconfigState:
        return ReconfigState(
            tuple(f.realize(p) for f, p in zip(self.families, self.split(x)))
        )

    def _forward(self, x: np.ndarray):
        Y = self.V
        cache = []
        for feed, family, params in zip(self.feeds, self.families, self.split(x)):
            Z = feed.matrix @ Y
            q = family.realize(params)
            Y = q[:, np.newaxis] * Z
            cache.append((Z, q, params, family))
        return Y, normalize_radiated(self.spec, Y, self.V), cache

    def effective_matrix(self, x: np.ndarray) -> np.ndarray:
        return self._forward(x)[1]

    def value(self, x: np.ndarray) -> float:
        return self.objective.value(self._forward(x)[1])

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        Y, E, cache = self._forward(x)
        f, G = self.objective.value_and_grad(E)
        norm = np.linalg.norm(Y)
        if self.spec.power_normalization == PowerNormalization.END_TO_END and norm > 0.0:
            unit = Y / norm
            G = np.linalg.norm(self.V) / norm * (G - unit * np.real(np.vdot(unit, G)))
        grads = []
        for feed, (Z, q, params, family) in zip(reversed(self.feeds), reversed(cache)):
            grads.append(
                np.real(np.sum(np.conj(G) * Z, axis=1) * family.derivative(params))
            )
            G = feed.matrix.conj().T @ (np.conj(q)[:, np.newaxis] * G)
        return f, np.concatenate(grads[::-1])


class AscentRun(NamedTuple):
    trace: List[float]
    x: np.ndarray
    termination: TerminationReason


def ascend(problem: ParameterObjective, x0: np.ndarray, cfg: OptimizerConfig) -> AscentRun:
    """
    Projected gradient ascent from x0. problem(x) returns the objective and its
    gradient, problem.value(x) the objective alone, problem.clip(x) projects
    parameters onto their box. Under StepRule.BACKTRACKING every accepted step
    satisfies the Armijo condition f_new >= f + c g . (x_new - x).
    """
    x = problem.clip(x0)
    f, g = problem(x)
    if not np.isfinite(f):
        raise NonFiniteObjective(f"Objective is {f} at the initial point.")
    trace = [f]
    termination = TerminationReason.MAX_ITERS
    for _ in range(cfg.max_iters):
        gmax = float(np.max(np.abs(g))) if g.size else 0.0
        if gmax == 0.0:
            termination = TerminationReason.CONVERGED
            break
        if cfg.step_rule == StepRule.FIXED:
            x_new = problem.clip(x + cfg.step_size * g)
        else:
            step = cfg.step_size / gmax
            while True:
                x_new = problem.clip(x + step * g)
                f_new = problem.value(x_new)
                if np.isfinite(f_new) and f_new >= f + cfg.armijo_c * np.dot(g, x_new - x):
                    break
                step *= cfg.shrink
                if step * gmax < STEP_UNDERFLOW:
                    break
            if step * gmax < STEP_UNDERFLOW:
                termination = TerminationReason.STALLED
                break
        f_new, g_new = problem(x_new)
        if not np.isfinite(f_new):
            raise NonFiniteObjective(f"Objective became {f_new} after {len(trace)} steps.")
        trace.append(f_new)
        done = abs(f_new - f) <= cfg.tolerance * max(1.0, abs(f))
        x, f, g = x_new, f_new, g_new
        if done:
            termination = TerminationReason.CONVERGED
            break
    return AscentRun(trace, x, termination)


def _polish_levels(problem: ParameterObjective, x: np.ndarray) -> np.ndarray:
    """
    Snap amplitude-set layers to their nearest levels, then sweep their
    elements one at a time, keeping whichever level scores best.
    """
    x = x.copy()
    layers = [
        (l, layer.constraint)
        for l, layer in enumerate(problem.spec.layers)
        if layer.constraint.kind == ConstraintKind.AMPLITUDE_SET
    ]
    for l, family in layers:
        a, b = problem.bounds[l], problem.bounds[l + 1]
        x[a:b] = np.real(family.project(x[a:b]))
    best = problem.value(x)
    for _ in range(POLISH_SWEEPS):
        improved = False
        for l, family in layers:
            for i in range(problem.bounds[l], problem.bounds[l + 1]):
                current = x[i]
                for level in family.levels:
                    if level == current:
                        continue
                    x[i] = level
                    f = problem.value(x)
                    if f > best:
                        best, current, improved = f, level, True
                x[i] = current
        if not improved:
            break
    return x


def initial_state(spec: ArchitectureSpec, rng: np.random.Generator) -> ReconfigState:
    """
    Starting point of the optimizers: i.i.d. uniform phases, amplitudes at
    mid-range (the level nearest to it for amplitude sets).
    """
    coefficients = []
    for layer in spec.layers:
        family = layer.constraint
        if family.is_amplitude:
            mid = np.full(layer.num_elements, 0.5 * (family.lo + family.hi))
            coefficients.append(family.project(mid))
        else:
            coefficients.append(family.sample(rng, layer.num_elements))
    return ReconfigState(tuple(coefficients))


@timed
def gradient_ascent(
    spec: ArchitectureSpec,
    V: BasebandProcessor,
    feeds: Sequence[FeedingMatrix],
    state0: ReconfigState,
    channels: ChannelSet,
    cfg: OptimizerConfig,
) -> OptimizationTrace:
    """
    Projected gradient ascent on the chart parameters of every layer, from
    state0 and cfg.num_starts - 1 random feasible states drawn from cfg.seed.
    The run with the best final objective is returned.
    """
    problem = ParameterObjective(spec, V, feeds, MatrixObjective(cfg, channels))
    rng = np.random.default_rng(cfg.seed)
    starts = [state0] + [ReconfigState.random(spec, rng) for _ in range(cfg.num_starts - 1)]
    best: Optional[Tuple[float, AscentRun, np.ndarray]] = None
    for i, start in enumerate(starts):
        run = ascend(problem, problem.pack(start), cfg)
        x = _polish_levels(problem, run.x)
        final = problem.value(x)
        logger.debug(
            f"Start {i}: objective {run.trace[0]:.6g} -> {final:.6g} after "
            f"{len(run.trace) - 1} steps ({run.termination.value})."
        )
        if best is None or final > best[0]:
            best = (final, run, x)
    final, run, x = best
    logger.info(
        f"{cfg.objective.value} ascent finished at {final:.6g} "
        f"({len(run.trace) - 1} iterations, {run.termination.value})."
    )
    return OptimizationTrace(
        objective_trace=tuple(float(f) for f in run.trace),
        state=problem.state(x),
        baseband=V,
        converged=run.termination != TerminationReason.MAX_ITERS,
        iterations=len(run.trace) - 1,
        termination=run.termination,
        final_objective=float(final),
    )


# Digital precoders


def water_filling(
    gains: np.ndarray, power: float, tolerance: float = WATER_FILLING_TOLERANCE
) -> np.ndarray:
    """
    Powers p_i = max(0, mu - 1/g_i) summing to the budget, maximizing
    sum log(1 + p_i g_i). The water level mu is found by bisection.
    """
    gains = np.asarray(gains, dtype=float)
    live = gains > 0.0
    if not np.any(live) or power <= 0.0:
        return np.zeros(gains.shape)
    floor = np.full(gains.shape, np.inf)
    floor[live] = 1.0 / gains[live]
    lo, hi = 0.0, power + float(np.max(floor[live]))
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        residual = float(np.sum(np.maximum(0.0, mu - floor))) - power
        if abs(residual) <= tolerance:
            break
        if residual > 0.0:
            hi = mu
        else:
            lo = mu
    p = np.maximum(0.0, mu - floor)
    return p * (power / np.sum(p))


def _normalized_columns(W: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(W, axis=0)
    return W / np.where(norms > 0.0, norms, 1.0)


def _allocate(H_eff: np.ndarray, directions: np.ndarray, power: float, noise_power: float) -> np.ndarray:
    gains = np.abs(np.sum(H_eff.T * directions, axis=0)) ** 2 / noise_power
    return directions * np.sqrt(water_filling(gains, power))


def mrt_precoder(H_eff: np.ndarray, power: float) -> np.ndarray:
    """
    Maximum-ratio directions h_u^H / ||h_u|| with the budget split evenly.
    """
    U = H_eff.shape[0]
    return _normalized_columns(H_eff.conj().T) * np.sqrt(power / U)


def zf_precoder(H_eff: np.ndarray, power: float, noise_power: float) -> np.ndarray:
    """
    Zero-forcing directions (unit-norm columns of the pseudo-inverse) with
    water-filling powers.
    """
    return _allocate(H_eff, _normalized_columns(np.linalg.pinv(H_eff)), power, noise_power)


def rzf_precoder(H_eff: np.ndarray, power: float, noise_power: float) -> np.ndarray:
    """
    Regularized zero-forcing H^H (H H^H + delta I)^-1 with delta = sigma^2 U / P,
    unit-norm columns and water-filling powers.
    """
    U = H_eff.shape[0]
    delta = noise_power * U / power
    W = H_eff.conj().T @ np.linalg.inv(H_eff @ H_eff.conj().T + delta * np.eye(U))
    return _allocate(H_eff, _normalized_columns(W), power, noise_power)


def _embed(spec: ArchitectureSpec, W: np.ndarray, streams: np.ndarray) -> BasebandProcessor:
    V = np.zeros((spec.num_rf_chains, spec.num_streams), dtype=complex)
    V[:, streams] = W
    return BasebandProcessor(V, spec.power_budget)


def _objective_at(
    spec: ArchitectureSpec,
    V: BasebandProcessor,
    feeds: Sequence[FeedingMatrix],
    state: ReconfigState,
    objective: MatrixObjective,
) -> float:
    return objective.value(build_effective_matrix(spec, V, feeds, state).matrix)


def precoder_step(
    spec: ArchitectureSpec,
    feeds: Sequence[FeedingMatrix],
    state: ReconfigState,
    channels: ChannelSet,
    cfg: OptimizerConfig,
    current: BasebandProcessor,
) -> BasebandProcessor:
    """
    With the reconfiguration fixed, pick the baseband matrix among zero-forcing
    and regularized zero-forcing (both water-filled) on the effective channel
    H prod_l Q_l T_l, and the current one, whichever scores best.
    """
    H_eff = channels.H @ layer_product(feeds, state)
    U, K = H_eff.shape
    streams = resolve_stream_map(U, spec.num_streams, cfg.stream_to_user)
    objective = MatrixObjective(cfg, channels)
    power = spec.power_budget
    condition = float(np.linalg.cond(H_eff)) if K >= U else float("inf")
    candidates = []
    if condition > SINGULAR_CONDITION:
        if not cfg.regularized:
            raise SingularEffectiveChannel(condition)
        logger.debug(f"Skipping zero-forcing, condition number {condition:.3e}.")
    else:
        candidates.append(_embed(spec, zf_precoder(H_eff, power, channels.noise_power), streams))
    if cfg.regularized:
        candidates.append(
            _embed(spec, rzf_precoder(H_eff, power, channels.noise_power), streams)
        )
    best, best_value = current, _objective_at(spec, current, feeds, state, objective)
    for candidate in candidates:
        value = _objective_at(spec, candidate, feeds, state, objective)
        if value > best_value:
            best, best_value = candidate, value
    return best


@timed
def alternating_optimize(
    spec: ArchitectureSpec,
    channels: ChannelSet,
    cfg: OptimizerConfig,
    feeds: Optional[Sequence[FeedingMatrix]] = None,
    state0: Optional[ReconfigState] = None,
) -> OptimizationTrace:
    """
    Alternate between the digital precoder (precoder_step, reconfiguration
    fixed) and gradient ascent on the reconfiguration (precoder fixed) for up
    to cfg.max_iters rounds. objective_trace holds the starting objective and
    the objective after every round.
    """
    if not spec.has_digital_precoding:
        raise UnsupportedArchitecture(
            f"{spec.kind.value} has no digital precoder to alternate with."
        )
    feeds = list(feeds) if feeds is not None else build_feeds(spec)
    rng = np.random.default_rng(cfg.seed)
    state = state0 if state0 is not None else initial_state(spec, rng)
    objective = MatrixObjective(cfg, channels)
    V = BasebandProcessor.equal_power(spec.num_rf_chains, spec.num_streams, spec.power_budget)
    f = _objective_at(spec, V, feeds, state, objective)
    if not np.isfinite(f):
        raise NonFiniteObjective(f"Objective is {f} at the initial point.")
    trace = [f]
    inner = cfg._replace(max_iters=cfg.inner_iters, num_starts=1)
    termination = TerminationReason.MAX_ITERS
    for r in range(cfg.max_iters):
        with hierarchical_timer("precoder_step"):
            V = precoder_step(spec, feeds, state, channels, cfg, V)
        run = gradient_ascent(spec, V, feeds, state, channels, inner)
        f_new = _objective_at(spec, V, feeds, state, objective)
        if run.final_objective > f_new:
            state, f_new = run.state, run.final_objective
        logger.debug(f"Round {r + 1}: objective {f_new:.6g}.")
        trace.append(f_new)
        done = abs(f_new - f) <= cfg.tolerance * max(1.0, abs(f))
        f = f_new
        if done:
            termination = TerminationReason.CONVERGED
            break
    logger.info(
        f"{cfg.objective.value} alternating optimization finished at {f:.6g} "
        f"({len(trace) - 1} rounds, {termination.value})."
    )
    return OptimizationTrace(
        objective_trace=tuple(float(v) for v in trace),
        state=state,
        baseband=V,
        converged=termination != TerminationReason.MAX_ITERS,
        iterations=len(trace) - 1,
        termination=termination,
        final_objective=float(f),
    )


class GradientCheckReport(NamedTuple):
    max_relative_error: float
    analytic: np.ndarray
    numeric: np.ndarray


def check_gradient(
    objective: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    point: np.ndarray,
    h_fd: float = 1e-6,
) -> GradientCheckReport:
    """
    Compare the analytic gradient returned by objective(point) with central
    finite differences of step h_fd (within [1e-8, 1e-3]). The error is the
    largest componentwise difference relative to the largest gradient entry.
    """
    if not 1e-8 <= h_fd <= 1e-3:
        raise ScenarioValidationError([("h_fd", f"step {h_fd} lies outside [1e-8, 1e-3]")])
    x = np.asarray(point, dtype=float)
    analytic = np.asarray(objective(x)[1], dtype=float)
    numeric = np.zeros(x.size)
    for i in range(x.size):
        step = np.zeros(x.size)
        step[i] = h_fd
        numeric[i] = (objective(x + step)[0] - objective(x - step)[0]) / (2.0 * h_fd)
    scale = max(float(np.max(np.abs(numeric), initial=0.0)), float(np.max(np.abs(analytic), initial=0.0)))
    error = float(np.max(np.abs(analytic - numeric), initial=0.0)) / scale if scale > 0.0 else 0.0
    return GradientCheckReport(error, analytic, numeric)


class ParetoPoint(NamedTuple):
    weight: float
    rate: float
    worst_target_power: float
    objective: float


def optimizer_for(
    spec: ArchitectureSpec,
    channels: ChannelSet,
    feeds: Sequence[FeedingMatrix],
    state0: ReconfigState,
) -> Callable[[OptimizerConfig], OptimizationTrace]:
    """
    The optimizer suited to the architecture, as a function of its settings:
    alternating_optimize when a digital precoder exists, gradient_ascent over
    the reconfiguration state alone otherwise.
    """
    if spec.has_digital_precoding:
        return lambda cfg: alternating_optimize(spec, channels, cfg, feeds, state0)
    V = BasebandProcessor.for_architecture(spec)
    return lambda cfg: gradient_ascent(spec, V, feeds, state0, channels, cfg)


def trace_effective_matrix(
    spec: ArchitectureSpec, feeds: Sequence[FeedingMatrix], trace: OptimizationTrace
) -> np.ndarray:
    return build_effective_matrix(spec, trace.baseband, feeds, trace.state).matrix


@timed
def pareto_sweep(
    spec: ArchitectureSpec,
    channels: ChannelSet,
    weights: Sequence[float],
    cfg: OptimizerConfig,
    feeds: Optional[Sequence[FeedingMatrix]] = None,
    state0: Optional[ReconfigState] = None,
) -> List[ParetoPoint]:
    """
    Trace the rate / worst-target-power frontier over communication weights.
    The communication-only (w = 1) and sensing-only (w = 0) optima, from the
    same initial state, normalize every weighted run and are reused as the
    end points. Digitally precoded architectures use alternating_optimize,
    the others gradient_ascent.
    """
    weights = [float(w) for w in weights]
    if any(not 0.0 <= w <= 1.0 for w in weights) or weights != sorted(weights):
        raise ScenarioValidationError(
            [("sweep.weights", "weights must be sorted values in [0, 1]")]
        )
    feeds = list(feeds) if feeds is not None else build_feeds(spec)
    if state0 is None:
        state0 = initial_state(spec, np.random.default_rng(cfg.seed))
    optimize = optimizer_for(spec, channels, feeds, state0)

    def measure(trace: OptimizationTrace) -> Tuple[float, float]:
        E = trace_effective_matrix(spec, feeds, trace)
        rate = sum_rate(channels.H, E, channels.noise_power, cfg.stream_to_user)[0]
        return rate, float(np.min(beam_patterns(E, channels.target_steering)))

    comm = optimize(cfg._replace(objective=ObjectiveKind.SUM_RATE))
    sense = optimize(cfg._replace(objective=ObjectiveKind.BEAM_PATTERN_GAIN))
    rate_ref = measure(comm)[0]
    power_ref = measure(sense)[1]
    points = []
    for w in weights:
        if w == 1.0:
            trace = comm
        elif w == 0.0:
            trace = sense
        else:
            trace = optimize(
                cfg._replace(
                    objective=ObjectiveKind.WEIGHTED_ISAC,
                    weight=w,
                    rate_ref=rate_ref,
                    power_ref=power_ref,
                )
            )
        rate, worst = measure(trace)
        points.append(
            ParetoPoint(w, rate, worst, isac_objective(w, rate, rate_ref, [worst], power_ref))
        )
        logger.debug(f"w={w:.3f}: rate {rate:.4f} bits/s/Hz, worst target {worst:.4g}.")
    return points
