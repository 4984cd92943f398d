"""
Composition of the unified transceiver model: architecture validation, feed
assembly and the effective transmit matrix E = (prod_l Q_l T_l) V.
"""

from typing import List, Optional, Sequence

import numpy as np

from imisac.base_types import (
    ArchitectureKind,
    ArchitectureSpec,
    BasebandProcessor,
    EffectiveTransmitMatrix,
    FeedingMatrix,
    FeedingTopology,
    PowerNormalization,
    ReconfigState,
    ValidationReport,
    Violation,
)
from imisac.channel import scalar_carrier_feed, sim_diffraction_matrix, waveguide_feed
from imisac.constraints import ConstraintKind
from imisac.exception import (
    ConstraintViolation,
    DimensionMismatch,
    LayerOutOfRange,
    PowerBudgetExceeded,
)
from imisac.logging_util import get_logger
from imisac.timers import timed

logger = get_logger(__name__)

BUILD_CONSTRAINT_TOLERANCE = 1e-9
POWER_BUDGET_RTOL = 1e-9

_AMPLITUDE_KINDS = (ConstraintKind.AMPLITUDE_RANGE, ConstraintKind.AMPLITUDE_SET)


def _layer_rules(spec: ArchitectureSpec) -> List[Violation]:
    violations = []
    for l, layer in enumerate(spec.layers):
        path = f"layers[{l}]"
        positions = np.asarray(layer.positions)
        if positions.ndim != 2 or positions.shape[1] != 3 or positions.shape[0] < 1:
            violations.append(
                Violation(f"{path}.positions", "expected a nonempty N x 3 array of meters")
            )
        if l > 0 and layer.feeding != FeedingTopology.DENSE_DIFFRACTION:
            violations.append(
                Violation(
                    f"{path}.feeding",
                    f"{layer.feeding.value} feeding is only possible on the first layer",
                )
            )
        c = layer.constraint
        if c.kind == ConstraintKind.AMPLITUDE_RANGE and not 0.0 <= c.lo <= c.hi:
            violations.append(
                Violation(f"{path}.constraint", "amplitude range needs 0 <= lo <= hi")
            )
        if c.kind == ConstraintKind.AMPLITUDE_SET and (
            not c.levels or min(c.levels) < 0.0
        ):
            violations.append(
                Violation(f"{path}.constraint", "amplitude set needs nonnegative levels")
            )
        if layer.feeding == FeedingTopology.BLOCK_DIAGONAL_WAVEGUIDE:
            n = layer.num_elements
            guide = layer.waveguide
            if guide is None or layer.arclength is None or len(guide) != n:
                violations.append(
                    Violation(
                        f"{path}.waveguide",
                        "waveguide feeding needs a waveguide index and arclength per element",
                    )
                )
            elif np.any((np.asarray(guide) < 0) | (np.asarray(guide) >= spec.num_rf_chains)):
                violations.append(
                    Violation(f"{path}.waveguide", "every element must sit on a waveguide 0..K-1")
                )
    return violations


def _kind_rules(spec: ArchitectureSpec) -> List[Violation]:
    violations = []
    kinds = [layer.constraint.kind for layer in spec.layers]
    feedings = [layer.feeding for layer in spec.layers]
    if spec.kind == ArchitectureKind.RIS:
        if spec.num_rf_chains != 1:
            violations.append(
                Violation("num_rf_chains", "RIS requires single RF chain (carrier-only feed)")
            )
        if feedings[0] != FeedingTopology.SCALAR_CARRIER:
            violations.append(
                Violation("layers[0].feeding", "RIS requires a scalar carrier feed")
            )
        if any(k != ConstraintKind.UNIT_MODULUS for k in kinds):
            violations.append(
                Violation("layers.constraint", "RIS requires unit-modulus phase-only elements")
            )
    elif spec.kind == ArchitectureKind.SIM:
        if any(k != ConstraintKind.UNIT_MODULUS for k in kinds):
            violations.append(
                Violation("layers.constraint", "SIM requires unit-modulus phase-only elements")
            )
        if any(f != FeedingTopology.DENSE_DIFFRACTION for f in feedings):
            violations.append(
                Violation("layers.feeding", "SIM requires dense diffraction feeding on every layer")
            )
    elif spec.kind == ArchitectureKind.DMA:
        if any(k != ConstraintKind.LORENTZIAN for k in kinds):
            violations.append(
                Violation("layers.constraint", "DMA requires Lorentzian-constrained elements")
            )
        if feedings[0] != FeedingTopology.BLOCK_DIAGONAL_WAVEGUIDE:
            violations.append(
                Violation("layers[0].feeding", "DMA requires block-diagonal waveguide feeding")
            )
    elif spec.kind == ArchitectureKind.RHS:
        if any(k not in _AMPLITUDE_KINDS for k in kinds):
            violations.append(
                Violation(
                    "layers.constraint",
                    "RHS requires amplitude-only elements (amplitude range or set)",
                )
            )
    return violations


def validate_architecture(spec: ArchitectureSpec) -> ValidationReport:
    """
    Check the structural invariants and the architecture-specific rules of the
    comparison table. Violations are returned as data, never raised.
    """
    violations: List[Violation] = []
    if spec.num_layers < 1:
        return ValidationReport((Violation("layers", "at least one layer is required"),))
    if spec.num_rf_chains < 1:
        violations.append(Violation("num_rf_chains", "K must be a positive integer"))
    if spec.num_streams < 1:
        violations.append(Violation("num_streams", "S must be a positive integer"))
    elif spec.num_streams > spec.num_rf_chains:
        violations.append(Violation("num_streams", "S must not exceed K"))
    if not spec.carrier_frequency > 0.0:
        violations.append(Violation("carrier_frequency", "must be positive"))
    if not spec.power_budget > 0.0:
        violations.append(Violation("power_budget", "must be positive"))

    first = spec.layers[0]
    if (
        first.feeding == FeedingTopology.BLOCK_DIAGONAL_WAVEGUIDE
        and spec.num_rf_chains > first.num_elements
    ):
        violations.append(
            Violation("num_rf_chains", "K must not exceed the first layer's element count")
        )
    if first.feeding == FeedingTopology.SCALAR_CARRIER and spec.num_rf_chains != 1:
        violations.append(
            Violation("layers[0].feeding", "a scalar carrier feed drives exactly one RF chain")
        )
    if first.feeding == FeedingTopology.DENSE_DIFFRACTION:
        feeds = spec.feed_positions
        if feeds is None or np.asarray(feeds).shape != (spec.num_rf_chains, 3):
            violations.append(
                Violation("feed_positions", "diffraction feeding needs K x 3 feed antenna positions")
            )
    if spec.num_layers > 1 and not spec.layer_spacing > 0.0:
        violations.append(Violation("layer_spacing", "stacked layers need a positive spacing"))

    violations += _layer_rules(spec)
    violations += _kind_rules(spec)
    return ValidationReport(tuple(violations))


def build_feeds(
    spec: ArchitectureSpec,
    attenuation: Optional[float] = None,
    phase_constant: Optional[float] = None,
) -> List[FeedingMatrix]:
    """
    Feeding matrices of every layer according to the spec's declared
    topologies. Under PER_LAYER normalization each is scaled to unit spectral
    norm.
    """
    feeds = []
    for l, layer in enumerate(spec.layers):
        if layer.feeding == FeedingTopology.SCALAR_CARRIER:
            feed = scalar_carrier_feed(layer.num_elements, spec.carrier_attenuation)
        elif layer.feeding == FeedingTopology.BLOCK_DIAGONAL_WAVEGUIDE:
            feed = waveguide_feed(spec, attenuation, phase_constant, layer_index=l)
        else:
            source = spec.feed_positions if l == 0 else spec.layers[l - 1].positions
            feed = sim_diffraction_matrix(
                source, layer.positions, spec.wavelength, spec.element_area, layer_index=l
            )
        if spec.power_normalization == PowerNormalization.PER_LAYER:
            feed = feed._replace(matrix=feed.matrix / np.linalg.norm(feed.matrix, 2))
        feeds.append(feed)
    return feeds


def check_dimensions(
    spec: ArchitectureSpec,
    V: np.ndarray,
    feeds: Sequence[FeedingMatrix],
    state: ReconfigState,
) -> None:
    if len(feeds) != spec.num_layers or state.num_layers != spec.num_layers:
        raise DimensionMismatch(
            f"Expected {spec.num_layers} feeds and states, got {len(feeds)} feeds "
            f"and {state.num_layers} states."
        )
    if V.ndim != 2 or V.shape[0] != feeds[0].matrix.shape[1]:
        raise DimensionMismatch(
            f"Baseband matrix of shape {V.shape} does not feed layer 0 "
            f"(expects {feeds[0].matrix.shape[1]} rows).",
            layer=0,
        )
    cols = V.shape[0]
    for l, (feed, q) in enumerate(zip(feeds, state.coefficients)):
        rows = spec.layers[l].num_elements
        if feed.matrix.shape != (rows, cols):
            raise DimensionMismatch(
                f"Feeding matrix of layer {l} has shape {feed.matrix.shape}, "
                f"expected {(rows, cols)}.",
                layer=l,
            )
        if q.shape != (rows,):
            raise DimensionMismatch(
                f"Layer {l} has {q.shape[0] if q.ndim else 0} coefficients for {rows} elements.",
                layer=l,
            )
        cols = rows


def check_constraints(
    spec: ArchitectureSpec,
    state: ReconfigState,
    tolerance: float = BUILD_CONSTRAINT_TOLERANCE,
) -> None:
    for l, (layer, q) in enumerate(zip(spec.layers, state.coefficients)):
        error = layer.constraint.max_error(q)
        if error > tolerance:
            raise ConstraintViolation(l, error)


def compose(
    feeds: Sequence[FeedingMatrix],
    V: np.ndarray,
    coefficients: Sequence[np.ndarray],
) -> np.ndarray:
    """
    Raw product Q_{L-1} T_{L-1} ... Q_0 T_0 V without any checks.
    """
    out = V
    for feed, q in zip(feeds, coefficients):
        out = q[:, np.newaxis] * (feed.matrix @ out)
    return out


def normalize_radiated(spec: ArchitectureSpec, E: np.ndarray, V: np.ndarray) -> np.ndarray:
    if spec.power_normalization != PowerNormalization.END_TO_END:
        return E
    norm = np.linalg.norm(E)
    if norm == 0.0:
        return E
    return E * (np.linalg.norm(V) / norm)


def layer_product(feeds: Sequence[FeedingMatrix], state: ReconfigState) -> np.ndarray:
    """
    prod_l Q_l T_l (N_{L-1} x K), the analog part of the chain.
    """
    num_inputs = feeds[0].matrix.shape[1]
    return compose(feeds, np.eye(num_inputs, dtype=complex), state.coefficients)


@timed
def build_effective_matrix(
    spec: ArchitectureSpec,
    V: BasebandProcessor,
    feeds: Sequence[FeedingMatrix],
    state: ReconfigState,
) -> EffectiveTransmitMatrix:
    """
    E = Q_{L-1} T_{L-1} ... Q_0 T_0 V (rescaled under END_TO_END normalization).
    Coefficients may leave their family by floating-point drift up to 1e-9;
    anything beyond is a ConstraintViolation, never silently projected.
    """
    matrix = np.asarray(V.matrix, dtype=complex)
    check_dimensions(spec, matrix, feeds, state)
    check_constraints(spec, state)
    if V.power > V.power_budget * (1.0 + POWER_BUDGET_RTOL):
        raise PowerBudgetExceeded(
            f"||V||_F^2 = {V.power} exceeds the power budget {V.power_budget}."
        )
    E = normalize_radiated(spec, compose(feeds, matrix, state.coefficients), matrix)
    return EffectiveTransmitMatrix(
        matrix=E, spec_hash=spec.spec_hash(), state_hash=state.state_hash()
    )


def apply_parameters(
    spec: ArchitectureSpec, state: ReconfigState, layer: int, raw: np.ndarray
) -> ReconfigState:
    """
    Replace one layer's coefficients from raw (phase, amplitude) pairs, one row
    per element, after projection onto the layer's constraint family. Returns
    a new state; the input state is left unchanged.
    """
    if not 0 <= layer < spec.num_layers:
        raise LayerOutOfRange(f"Layer {layer} is outside 0..{spec.num_layers - 1}.")
    raw = np.asarray(raw, dtype=float).reshape(-1, 2)
    n = spec.layers[layer].num_elements
    if raw.shape[0] != n:
        raise DimensionMismatch(
            f"Layer {layer} has {n} elements, got {raw.shape[0]} raw values.", layer=layer
        )
    q = spec.layers[layer].constraint.from_raw(raw[:, 0], raw[:, 1])
    return state.with_layer(layer, q)
