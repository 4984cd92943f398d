"""
Scenario documents: loading, validation, canonical serialization and hashing.

A scenario is one JSON or YAML document:

    $schema_version: 1
    architecture:
      kind: SIM                  # RIS | SIM | DMA | RHS | Custom
      carrier_frequency: 28.0e9  # Hz, required
      num_rf_chains: 2
      num_streams: null          # defaults to num_rf_chains
      num_layers: 2              # SIM only
      elements_per_layer: 25     # int, or one int per layer (SIM)
      element_spacing: null      # wavelengths; 0.5 for RIS/SIM, 0.25 for DMA/RHS
      thickness_wavelengths: 5.0 # SIM stack thickness
      power_budget: 1.0          # watts
      power_normalization: null  # none | per_layer | end_to_end (SIM defaults to end_to_end)
      carrier_attenuation: [1.0, 0.0]
      amplitude_levels: []       # RHS discrete amplitudes; empty for a range
      amplitude_range: [0.0, 1.0]
      waveguide_attenuation: 0.58
      waveguide_permittivity: 2.2
      state: neutral             # neutral | random, the fixed state of `simulate`
      layers: []                 # Custom only, see below
      layer_spacing: 0.0         # Custom only, meters
      feed_positions: []         # Custom only, K x 3 meters
    channel:
      model: rician              # los | rician | rayleigh
      users: [[1.0, 0.0, 20.0]]  # meters, required
      rician_k: 10.0
      noise_power: 1.0e-12       # watts
      pathloss: true
      targets: [[30.0, 0.0]]     # far-field (azimuth, elevation) in degrees
      target_points: []          # near-field targets, meters
      beam_grid: [-90.0, 90.0, 181]
      export_channels: false     # also write each seed's user channels as CSV
    optimizer:
      objective: sum_rate        # sum_rate | beam_pattern_gain | weighted_isac | beampattern_mse
      weight: 0.5
      max_iters: 200
      step_rule: backtracking    # backtracking | fixed
      step_size: 0.5
      armijo_c: 1.0e-4
      shrink: 0.5
      tolerance: 1.0e-9
      num_starts: 4
      inner_iters: 25
      regularized: true
      stream_to_user: null
      mask_angles: []            # degrees, beampattern_mse only
      mask: []
    estimation:
      slots: 10
      noise_power: 0.0
      ridge: 0.0
      slot_counts: []            # NMSE-versus-slots study
    waveform:
      num_slots: 8
      period: 1.0e-6
      sense_direction: [30.0, 0.0]
      comm_phases: null          # radians; null matches the first user's channel
      comm_weight: 1.0
      sense_weight: 1.0
      comm_magnitude: 1.0
    sweep:
      parameter: elements_per_layer  # elements_per_layer | num_layers
      values: []
      total_elements: null       # fixed total when sweeping num_layers
      weights: []                # Pareto weights
    seeds: [0]
    output_dir: results

Custom layers are objects with `positions` (N x 3 meters), `feeding`
(dense_diffraction | block_diagonal_waveguide | scalar_carrier), `constraint`
({kind: unit_modulus | lorentzian | amplitude_range | amplitude_set, lo, hi,
levels}) and, for waveguide feeding, `waveguide` and `arclength` lists.

Every section except `architecture` and `channel` may be omitted. Complex
scalars are [re, im] pairs.
"""

import hashlib
import json
import math
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
import yaml

from imisac.base_types import (
    ArchitectureKind,
    ArchitectureSpec,
    FeedingTopology,
    LayerSpec,
    PowerNormalization,
)
from imisac.channel import (
    ChannelModel,
    ChannelSet,
    GeometryContext,
    generate_user_channels,
)
from imisac.constraints import ConstraintFamily, ConstraintKind
from imisac.exception import (
    ImIsacException,
    ScenarioParseError,
    ScenarioValidationError,
)
from imisac.framework import validate_architecture
from imisac.logging_util import get_logger
from imisac.optimize import BeampatternMask, ObjectiveKind, OptimizerConfig, StepRule

logger = get_logger(__name__)

SCHEMA_VERSION = 1
SCHEMA_KEY = "$schema_version"

REQUIRED = object()

ErrorList = List[Tuple[str, str]]


# Field converters. Each returns the normalized value or raises ValueError.


def _number(value: Any) -> float:
    if isinstance(value, bool):
        raise ValueError("expected a number")
    if not isinstance(value, (int, float, str)):
        raise ValueError("expected a number")
    # YAML 1.1 reads exponents without a dot (28e9) as strings.
    number = float(value)
    if not math.isfinite(number):
        raise ValueError("expected a finite number")
    return number


def _integer(value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError("expected an integer")
    return value


def _boolean(value: Any) -> bool:
    if not isinstance(value, bool):
        raise ValueError("expected true or false")
    return value


def _optional(convert: Callable[[Any], Any]) -> Callable[[Any], Any]:
    return lambda value: None if value is None else convert(value)


def _choice(*options: str) -> Callable[[Any], str]:
    def convert(value: Any) -> str:
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value

    return convert


class _FieldErrors(ValueError):
    """
    Problems found inside a nested value, with paths relative to it.
    """

    def __init__(self, errors: ErrorList):
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))
        self.errors = errors


def _join(name: str, path: str) -> str:
    return f"{name}{path}" if path.startswith("[") else f"{name}.{path}"


def _list_of(convert: Callable[[Any], Any], length: Optional[int] = None) -> Callable[[Any], List]:
    def convert_list(value: Any) -> List:
        if not isinstance(value, list):
            raise ValueError("expected a list")
        if length is not None and len(value) != length:
            raise ValueError(f"expected a list of {length} values")
        out, errors = [], []
        for i, item in enumerate(value):
            try:
                out.append(convert(item))
            except _FieldErrors as nested:
                errors += [(_join(f"[{i}]", p), m) for p, m in nested.errors]
            except ValueError as e:
                errors.append((f"[{i}]", str(e)))
        if errors:
            raise _FieldErrors(errors)
        return out

    return convert_list


def _int_or_list(value: Any) -> Any:
    if isinstance(value, list):
        return _list_of(_integer)(value)
    return _integer(value)


_point = _list_of(_number, 3)
_pair = _list_of(_number, 2)


def _complex_pair(value: Any) -> List[float]:
    if isinstance(value, list):
        return _pair(value)
    return [_number(value), 0.0]


def _grid(value: Any) -> List[float]:
    start, stop, num = _list_of(_number, 3)(value)
    if num < 1 or num != int(num):
        raise ValueError("expected [start_deg, stop_deg, count] with a positive count")
    return [start, stop, int(num)]


def _constraint(value: Any) -> Dict[str, Any]:
    return _parse_fields(
        value,
        _CONSTRAINT_FIELDS,
        "",
        errors=None,
        strict=True,
    )


def _layer(value: Any) -> Dict[str, Any]:
    return _parse_fields(value, _LAYER_FIELDS, "", errors=None, strict=True)


_CONSTRAINT_FIELDS = {
    "kind": (_choice(*(k.value for k in ConstraintKind)), REQUIRED),
    "lo": (_number, 0.0),
    "hi": (_number, 1.0),
    "levels": (_list_of(_number), []),
}

_LAYER_FIELDS = {
    "positions": (_list_of(_point), REQUIRED),
    "feeding": (_choice(*(f.value for f in FeedingTopology)), REQUIRED),
    "constraint": (_constraint, REQUIRED),
    "waveguide": (_optional(_list_of(_integer)), None),
    "arclength": (_optional(_list_of(_number)), None),
}

ARCHITECTURE_FIELDS = {
    "kind": (_choice(*(k.value for k in ArchitectureKind)), REQUIRED),
    "carrier_frequency": (_number, REQUIRED),
    "num_rf_chains": (_integer, 1),
    "num_streams": (_optional(_integer), None),
    "num_layers": (_integer, 1),
    "elements_per_layer": (_int_or_list, 16),
    "element_spacing": (_optional(_number), None),
    "thickness_wavelengths": (_number, 5.0),
    "power_budget": (_number, 1.0),
    "power_normalization": (
        _optional(_choice(*(p.value for p in PowerNormalization))),
        None,
    ),
    "carrier_attenuation": (_complex_pair, [1.0, 0.0]),
    "amplitude_levels": (_list_of(_number), []),
    "amplitude_range": (_pair, [0.0, 1.0]),
    "waveguide_attenuation": (_number, 0.58),
    "waveguide_permittivity": (_number, 2.2),
    "state": (_choice("neutral", "random"), "neutral"),
    "layers": (_list_of(_layer), []),
    "layer_spacing": (_number, 0.0),
    "feed_positions": (_list_of(_point), []),
}

CHANNEL_FIELDS = {
    "model": (_choice("los", "rician", "rayleigh"), "rician"),
    "users": (_list_of(_point), REQUIRED),
    "rician_k": (_number, 10.0),
    "noise_power": (_number, 1e-12),
    "pathloss": (_boolean, True),
    "targets": (_list_of(_pair), []),
    "target_points": (_list_of(_point), []),
    "beam_grid": (_grid, [-90.0, 90.0, 181]),
    "export_channels": (_boolean, False),
}

OPTIMIZER_FIELDS = {
    "objective": (
        _choice("sum_rate", "beam_pattern_gain", "weighted_isac", "beampattern_mse"),
        "sum_rate",
    ),
    "weight": (_number, 0.5),
    "max_iters": (_integer, 200),
    "step_rule": (_choice("backtracking", "fixed"), "backtracking"),
    "step_size": (_number, 0.5),
    "armijo_c": (_number, 1e-4),
    "shrink": (_number, 0.5),
    "tolerance": (_number, 1e-9),
    "num_starts": (_integer, 4),
    "inner_iters": (_integer, 25),
    "regularized": (_boolean, True),
    "stream_to_user": (_optional(_list_of(_integer)), None),
    "mask_angles": (_list_of(_number), []),
    "mask": (_list_of(_number), []),
}

ESTIMATION_FIELDS = {
    "slots": (_integer, 10),
    "noise_power": (_number, 0.0),
    "ridge": (_number, 0.0),
    "slot_counts": (_list_of(_integer), []),
}

WAVEFORM_FIELDS = {
    "num_slots": (_integer, 8),
    "period": (_number, 1e-6),
    "sense_direction": (_pair, [30.0, 0.0]),
    "comm_phases": (_optional(_list_of(_number)), None),
    "comm_weight": (_number, 1.0),
    "sense_weight": (_number, 1.0),
    "comm_magnitude": (_number, 1.0),
}

SWEEP_FIELDS = {
    "parameter": (_choice("elements_per_layer", "num_layers"), "elements_per_layer"),
    "values": (_list_of(_integer), []),
    "total_elements": (_optional(_integer), None),
    "weights": (_list_of(_number), []),
}

SECTIONS = {
    "architecture": (ARCHITECTURE_FIELDS, True),
    "channel": (CHANNEL_FIELDS, True),
    "optimizer": (OPTIMIZER_FIELDS, False),
    "estimation": (ESTIMATION_FIELDS, False),
    "waveform": (WAVEFORM_FIELDS, False),
    "sweep": (SWEEP_FIELDS, False),
}


def _parse_fields(
    raw: Any,
    fields: Dict[str, Tuple[Callable[[Any], Any], Any]],
    path: str,
    errors: Optional[ErrorList],
    strict: bool,
) -> Dict[str, Any]:
    """
    Convert one mapping field by field, collecting every problem. With
    errors=None (nested objects) problems are raised together instead.
    """
    own: ErrorList = []
    prefix = f"{path}." if path else ""
    if not isinstance(raw, dict):
        if errors is None:
            raise ValueError("expected a mapping")
        own.append((path or "<root>", "expected a mapping"))
        raw = {}
    out: Dict[str, Any] = {}
    for name, (convert, default) in fields.items():
        if name not in raw or (raw[name] is None and default is REQUIRED):
            if default is REQUIRED:
                own.append((prefix + name, "required field is missing"))
            else:
                out[name] = default
            continue
        try:
            out[name] = convert(raw[name])
        except _FieldErrors as nested:
            own += [(_join(prefix + name, p), m) for p, m in nested.errors]
        except ValueError as e:
            own.append((prefix + name, str(e)))
    for name in raw:
        if name not in fields:
            if strict:
                own.append((prefix + str(name), "unknown field"))
            else:
                logger.warning(f"Ignoring unknown field {prefix}{name}.")
    if errors is None:
        if own:
            raise _FieldErrors(own)
    else:
        errors += own
    return out


class ScenarioConfig(NamedTuple):
    """
    A validated scenario. Sections are plain dictionaries of normalized,
    JSON-compatible values with every default filled in.
    """

    architecture: Dict[str, Any]
    channel: Dict[str, Any]
    optimizer: Dict[str, Any]
    estimation: Dict[str, Any]
    waveform: Dict[str, Any]
    sweep: Dict[str, Any]
    seeds: Tuple[int, ...] = (0,)
    output_dir: str = "results"

    def as_dict(self) -> Dict[str, Any]:
        return {
            SCHEMA_KEY: SCHEMA_VERSION,
            "architecture": self.architecture,
            "channel": self.channel,
            "optimizer": self.optimizer,
            "estimation": self.estimation,
            "waveform": self.waveform,
            "sweep": self.sweep,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
        }

    def config_hash(self) -> str:
        """
        SHA-256 of the canonical JSON form. Seeds, the output directory and the
        channel export switch are left out: results are identified by
        (config hash, seed).
        """
        doc = self.as_dict()
        del doc["seeds"], doc["output_dir"]
        doc["channel"] = {k: v for k, v in self.channel.items() if k != "export_channels"}
        return hashlib.sha256(canonical_json(doc).encode("utf-8")).hexdigest()

    def with_overrides(
        self, seed: Optional[int] = None, output_dir: Optional[str] = None
    ) -> "ScenarioConfig":
        config = self
        if seed is not None:
            config = config._replace(seeds=(int(seed),))
        if output_dir is not None:
            config = config._replace(output_dir=str(output_dir))
        return config


def canonical_json(doc: Any) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def parse_document(text: str, source: str = "<scenario>") -> Any:
    """
    Parse JSON or YAML text (JSON is a subset of what yaml.safe_load reads).
    """
    try:
        return yaml.safe_load(text)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        line = None if mark is None else mark.line + 1
        column = None if mark is None else mark.column + 1
        raise ScenarioParseError(f"Could not parse {source}: {e.problem}", line, column)
    except yaml.YAMLError as e:
        raise ScenarioParseError(f"Could not parse {source}: {e}", None, None)


def _constraint_family(raw: Dict[str, Any]) -> ConstraintFamily:
    kind = ConstraintKind(raw["kind"])
    if kind == ConstraintKind.UNIT_MODULUS:
        return ConstraintFamily.unit_modulus()
    if kind == ConstraintKind.LORENTZIAN:
        return ConstraintFamily.lorentzian()
    if kind == ConstraintKind.AMPLITUDE_RANGE:
        return ConstraintFamily.amplitude_range(raw["lo"], raw["hi"])
    return ConstraintFamily.amplitude_set(raw["levels"])


def _custom_layer(raw: Dict[str, Any]) -> LayerSpec:
    waveguide, arclength = raw["waveguide"], raw["arclength"]
    return LayerSpec(
        positions=np.asarray(raw["positions"], dtype=float).reshape(-1, 3),
        feeding=FeedingTopology(raw["feeding"]),
        constraint=_constraint_family(raw["constraint"]),
        waveguide=None if waveguide is None else np.asarray(waveguide, dtype=int),
        arclength=None if arclength is None else np.asarray(arclength, dtype=float),
    )


def build_architecture(architecture: Dict[str, Any]) -> ArchitectureSpec:
    """
    ArchitectureSpec of a validated architecture section. The factories fix
    the geometry; K, S and the waveguide parameters are then taken from the
    section as given so that validate_architecture can judge them. A section
    whose geometry cannot be built raises ScenarioValidationError.
    """
    try:
        return _assemble_architecture(architecture)
    except (ValueError, IndexError, ZeroDivisionError) as e:
        raise ScenarioValidationError([("architecture", f"inconsistent geometry ({e})")]) from e


def _assemble_architecture(architecture: Dict[str, Any]) -> ArchitectureSpec:
    a = architecture
    kind = ArchitectureKind(a["kind"])
    K = a["num_rf_chains"]
    S = a["num_streams"] if a["num_streams"] is not None else K
    counts = a["elements_per_layer"]
    if kind != ArchitectureKind.SIM and isinstance(counts, list):
        if len(counts) != 1:
            raise ValueError(f"{kind.value} has a single layer, got {len(counts)} element counts")
        counts = counts[0]
    if kind == ArchitectureKind.SIM:
        layers = len(counts) if isinstance(counts, list) else a["num_layers"]
        if isinstance(counts, list) and len(counts) != a["num_layers"]:
            raise ValueError(
                f"elements_per_layer lists {len(counts)} layers but num_layers is {a['num_layers']}"
            )
        if layers < 1:
            raise ValueError("num_layers must be at least 1")
    for n in counts if isinstance(counts, list) else [counts]:
        if n < 1:
            raise ValueError("every layer needs at least one element")
    normalization = (
        None if a["power_normalization"] is None else PowerNormalization(a["power_normalization"])
    )
    f = a["carrier_frequency"]
    if not f > 0.0:
        raise ValueError("carrier_frequency must be positive")

    if kind == ArchitectureKind.RIS:
        spec = ArchitectureSpec.create_ris(
            counts,
            f,
            element_spacing=a["element_spacing"] or 0.5,
            carrier_attenuation=complex(*a["carrier_attenuation"]),
            power_budget=a["power_budget"],
        )
    elif kind == ArchitectureKind.SIM:
        spec = ArchitectureSpec.create_sim(
            counts,
            a["num_layers"],
            max(K, 1),
            f,
            num_streams=S,
            element_spacing=a["element_spacing"] or 0.5,
            thickness_wavelengths=a["thickness_wavelengths"],
            power_normalization=normalization or PowerNormalization.END_TO_END,
            power_budget=a["power_budget"],
        )
    elif kind == ArchitectureKind.DMA:
        spec = ArchitectureSpec.create_dma(
            counts,
            max(K, 1),
            f,
            num_streams=S,
            element_spacing=a["element_spacing"] or 0.25,
            power_normalization=normalization or PowerNormalization.NONE,
            power_budget=a["power_budget"],
        )
    elif kind == ArchitectureKind.RHS:
        spec = ArchitectureSpec.create_rhs(
            counts,
            max(K, 1),
            f,
            num_streams=S,
            amplitude_levels=a["amplitude_levels"],
            amplitude_range=tuple(a["amplitude_range"]),
            element_spacing=a["element_spacing"] or 0.25,
            power_normalization=normalization or PowerNormalization.NONE,
            power_budget=a["power_budget"],
        )
    else:
        feeds = a["feed_positions"]
        spec = ArchitectureSpec(
            kind=kind,
            layers=tuple(_custom_layer(layer) for layer in a["layers"]),
            num_rf_chains=K,
            num_streams=S,
            carrier_frequency=f,
            element_spacing=a["element_spacing"] or 0.5,
            layer_spacing=a["layer_spacing"],
            feed_positions=np.asarray(feeds, dtype=float).reshape(-1, 3) if feeds else None,
            carrier_attenuation=complex(*a["carrier_attenuation"]),
            power_normalization=normalization or PowerNormalization.NONE,
            power_budget=a["power_budget"],
        )
    if kind == ArchitectureKind.RIS and normalization is not None:
        spec = spec._replace(power_normalization=normalization)
    return spec._replace(
        num_rf_chains=K,
        num_streams=S,
        waveguide_attenuation=a["waveguide_attenuation"],
        waveguide_permittivity=a["waveguide_permittivity"],
    )


def optimizer_config(
    optimizer: Dict[str, Any], seed: int, geometry: Optional[GeometryContext] = None
) -> OptimizerConfig:
    """
    OptimizerConfig of a validated optimizer section. The beam-pattern mask
    needs the aperture geometry; without it the mask is left unset.
    """
    o = optimizer
    mask = None
    if geometry is not None and o["mask_angles"]:
        mask = BeampatternMask.from_angles(geometry, np.radians(o["mask_angles"]), o["mask"])
    stream_map = o["stream_to_user"]
    return OptimizerConfig(
        objective=ObjectiveKind(o["objective"]),
        weight=o["weight"],
        max_iters=o["max_iters"],
        step_rule=StepRule(o["step_rule"]),
        step_size=o["step_size"],
        armijo_c=o["armijo_c"],
        shrink=o["shrink"],
        tolerance=o["tolerance"],
        seed=int(seed),
        num_starts=o["num_starts"],
        inner_iters=o["inner_iters"],
        regularized=o["regularized"],
        stream_to_user=None if stream_map is None else tuple(stream_map),
        mask=mask,
    )


def build_channels(channel: Dict[str, Any], spec: ArchitectureSpec, seed: int) -> ChannelSet:
    """
    Draw the user channels of a validated channel section for the aperture of
    spec. Target directions are given in degrees.
    """
    c = channel
    return generate_user_channels(
        GeometryContext.from_spec(spec),
        c["users"],
        ChannelModel(c["model"]),
        seed,
        rician_k=c["rician_k"],
        noise_power=c["noise_power"],
        pathloss=c["pathloss"],
        target_directions=[tuple(np.radians(t)) for t in c["targets"]],
        target_points=c["target_points"],
    )


def beam_azimuths(channel: Dict[str, Any]) -> np.ndarray:
    """
    Azimuth grid of the reported beam pattern, in radians.
    """
    start, stop, num = channel["beam_grid"]
    return np.radians(np.linspace(start, stop, int(num)))


def _architecture_rules(architecture: Dict[str, Any], errors: ErrorList) -> None:
    try:
        spec = build_architecture(architecture)
    except ScenarioValidationError as e:
        errors.extend(e.errors)
        return
    except ImIsacException as e:
        errors.append(("architecture", str(e)))
        return
    for violation in validate_architecture(spec).violations:
        errors.append((f"architecture.{violation.field}", violation.message))


def _channel_rules(channel: Dict[str, Any], errors: ErrorList) -> None:
    if not channel["users"]:
        errors.append(("channel.users", "at least one user is required"))
    if not channel["noise_power"] > 0.0:
        errors.append(("channel.noise_power", "must be positive"))
    if channel["model"] == "rician" and channel["rician_k"] < 0.0:
        errors.append(("channel.rician_k", "must be nonnegative"))


def _optimizer_rules(optimizer: Dict[str, Any], errors: ErrorList) -> None:
    for violation in optimizer_config(optimizer, seed=0).violations():
        errors.append((f"optimizer.{violation.field}", violation.message))
    if optimizer["objective"] == "beampattern_mse" and (
        not optimizer["mask"] or len(optimizer["mask"]) != len(optimizer["mask_angles"])
    ):
        errors.append(
            ("optimizer.mask", "beampattern_mse needs one mask value per mask angle")
        )


def _estimation_rules(estimation: Dict[str, Any], errors: ErrorList) -> None:
    if estimation["slots"] < 1:
        errors.append(("estimation.slots", "must be at least 1"))
    if estimation["noise_power"] < 0.0:
        errors.append(("estimation.noise_power", "must be nonnegative"))
    if estimation["ridge"] < 0.0:
        errors.append(("estimation.ridge", "must be nonnegative"))
    if any(t < 1 for t in estimation["slot_counts"]):
        errors.append(("estimation.slot_counts", "every slot count must be at least 1"))


def _waveform_rules(waveform: Dict[str, Any], errors: ErrorList) -> None:
    if waveform["num_slots"] < 2:
        errors.append(("waveform.num_slots", "must be at least 2"))
    if not waveform["period"] > 0.0:
        errors.append(("waveform.period", "must be positive"))
    for name in ("comm_weight", "sense_weight"):
        if waveform[name] < 0.0:
            errors.append((f"waveform.{name}", "must be nonnegative"))
    if waveform["comm_magnitude"] < 0.0:
        errors.append(("waveform.comm_magnitude", "must be nonnegative"))


def _sweep_rules(sweep: Dict[str, Any], errors: ErrorList) -> None:
    if any(v < 1 for v in sweep["values"]):
        errors.append(("sweep.values", "every value must be at least 1"))
    weights = sweep["weights"]
    if any(not 0.0 <= w <= 1.0 for w in weights):
        errors.append(("sweep.weights", "weights must lie in [0, 1]"))
    elif any(b < a for a, b in zip(weights, weights[1:])):
        errors.append(("sweep.weights", "weights must be sorted ascending"))
    total = sweep["total_elements"]
    if sweep["parameter"] == "num_layers" and total is not None:
        for v in sweep["values"]:
            if v < 1:
                continue
            if total < v:
                errors.append(("sweep.total_elements", f"{total} elements cannot fill {v} layers"))
                break
            if total % v:
                errors.append(("sweep.total_elements", f"{total} elements do not split into {v} layers"))
                break


SECTION_RULES: Dict[str, Callable[[Dict[str, Any], ErrorList], None]] = {
    "architecture": _architecture_rules,
    "channel": _channel_rules,
    "optimizer": _optimizer_rules,
    "estimation": _estimation_rules,
    "waveform": _waveform_rules,
    "sweep": _sweep_rules,
}


def scenario_from_dict(doc: Any, strict: bool = True) -> ScenarioConfig:
    """
    Validate a parsed scenario document. Every problem is reported in one
    ScenarioValidationError.
    """
    errors: ErrorList = []
    if not isinstance(doc, dict):
        raise ScenarioValidationError([("<root>", "expected a mapping")])
    version = doc.get(SCHEMA_KEY)
    if version != SCHEMA_VERSION:
        errors.append((SCHEMA_KEY, f"expected {SCHEMA_VERSION}, got {version!r}"))
    sections = {}
    for name, (fields, required) in SECTIONS.items():
        if name not in doc and required:
            errors.append((name, "required section is missing"))
            sections[name] = None
            continue
        sections[name] = _parse_fields(doc.get(name, {}), fields, name, errors, strict)
    seeds: Tuple[int, ...] = (0,)
    if "seeds" in doc:
        try:
            raw = doc["seeds"]
            seeds = tuple(_list_of(_integer)(raw if isinstance(raw, list) else [raw]))
            if not seeds or any(s < 0 for s in seeds):
                raise ValueError("expected one or more nonnegative integers")
        except ValueError as e:
            errors.append(("seeds", str(e)))
    output_dir = doc.get("output_dir", "results")
    if not isinstance(output_dir, str):
        errors.append(("output_dir", "expected a path"))
    for name in doc:
        if name not in SECTIONS and name not in ("seeds", "output_dir", SCHEMA_KEY):
            if strict:
                errors.append((str(name), "unknown field"))
            else:
                logger.warning(f"Ignoring unknown section {name}.")

    for name, rules in SECTION_RULES.items():
        section = sections[name]
        # a field that failed to convert leaves its key out
        if section is not None and all(field in section for field in SECTIONS[name][0]):
            rules(section, errors)
    if errors:
        raise ScenarioValidationError(errors)
    return ScenarioConfig(seeds=seeds, output_dir=output_dir, **sections)


def load_scenario(path: str, strict: bool = True) -> ScenarioConfig:
    """
    Read, parse and validate the scenario file at path.
    """
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ScenarioParseError(f"Could not read {path}: {e.strerror}", None, None)
    return scenario_from_dict(parse_document(text, path), strict)


def dump_scenario(config: ScenarioConfig) -> str:
    return json.dumps(config.as_dict(), indent=2, sort_keys=True) + "\n"


def required_sweep_values(config: ScenarioConfig, command: str) -> None:
    """
    Sweep commands need a nonempty axis, and a Pareto sweep a sensing target.
    """
    errors: ErrorList = []
    if command == "sweep" and not config.sweep["values"]:
        errors.append(("sweep.values", "a sweep needs at least one value"))
    if command == "pareto":
        if not config.sweep["weights"]:
            errors.append(("sweep.weights", "a Pareto sweep needs weights"))
        if not config.channel["targets"] and not config.channel["target_points"]:
            errors.append(("channel.targets", "a Pareto sweep needs at least one target"))
    if errors:
        raise ScenarioValidationError(errors)


def substream_seed(master: int, module_id: int, counter: int = 0) -> int:
    """
    Seed of the counter-th random stream of a module, derived from the
    master seed. Module ids: channel=1, optimize=2, estimate=3, waveform=4,
    sweep=5.
    """
    sequence = np.random.SeedSequence(master, spawn_key=(module_id, counter))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


CHANNEL_STREAM = 1
OPTIMIZE_STREAM = 2
ESTIMATE_STREAM = 3
WAVEFORM_STREAM = 4
SWEEP_STREAM = 5


def env_overrides(environ: Dict[str, str]) -> Dict[str, Any]:
    """
    Values of the IMISAC_SEED, IMISAC_OUT and IMISAC_THREADS variables.
    """
    out: Dict[str, Any] = {}
    errors: ErrorList = []
    for name, key, convert in (
        ("IMISAC_SEED", "seed", int),
        ("IMISAC_OUT", "output_dir", str),
        ("IMISAC_THREADS", "threads", int),
    ):
        if name in environ:
            try:
                out[key] = convert(environ[name])
            except ValueError:
                errors.append((name, f"could not interpret {environ[name]!r}"))
    if errors:
        raise ScenarioValidationError(errors)
    return out
