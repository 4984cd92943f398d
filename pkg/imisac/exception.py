from typing import Any, Dict, List, Optional, Tuple


class ImIsacException(Exception):
    """
    Any error raised by the imisac library. Every subclass carries a stable,
    machine-readable code which the runner puts in its error documents.
    """

    code = "imisac_error"

    def details(self) -> Dict[str, Any]:
        """
        Structured data attached to the error, for the runner's error JSON.
        """
        return {}


class DimensionMismatch(ImIsacException):
    """
    Matrix or vector shapes do not chain. The message names the offending layer
    when one is involved.
    """

    code = "dimension_mismatch"

    def __init__(self, message: str, layer: Optional[int] = None):
        super().__init__(message)
        self.layer = layer

    def details(self) -> Dict[str, Any]:
        return {} if self.layer is None else {"layer": self.layer}


class ConstraintViolation(ImIsacException):
    """
    A reconfiguration state leaves its constraint family by more than the
    build-time tolerance.
    """

    code = "constraint_violation"

    def __init__(self, layer: int, max_error: float):
        super().__init__(
            f"Layer {layer} violates its constraint family (max error {max_error:.3e})."
        )
        self.layer = layer
        self.max_error = max_error

    def details(self) -> Dict[str, Any]:
        return {"layer": self.layer, "max_error": self.max_error}


class PowerBudgetExceeded(ImIsacException):
    """
    The baseband matrix radiates more than its total power budget.
    """

    code = "power_budget_exceeded"


class LayerOutOfRange(ImIsacException):
    """
    A layer index outside 0..L-1 was requested.
    """

    code = "layer_out_of_range"


class InvalidWavelength(ImIsacException):
    """
    Wavelength must be strictly positive.
    """

    code = "invalid_wavelength"


class CoincidentSource(ImIsacException):
    """
    A near-field source point sits on top of an array element.
    """

    code = "coincident_source"


class NonPositiveSpacing(ImIsacException):
    """
    Two diffraction layers are not separated by a positive distance along the
    propagation axis.
    """

    code = "non_positive_spacing"


class UnassignedElement(ImIsacException):
    """
    An element of a waveguide-fed layer is not attached to any RF chain.
    """

    code = "unassigned_element"


class StreamMapInvalid(ImIsacException):
    """
    The stream-to-user map is not a one-to-one map onto existing streams.
    """

    code = "stream_map_invalid"


class EmptyGrid(ImIsacException):
    """
    A beam-pattern evaluation was requested over an empty angle grid.
    """

    code = "empty_grid"


class NonPositiveReference(ImIsacException):
    """
    Normalization references of the ISAC objective must be strictly positive.
    """

    code = "non_positive_reference"


class NonFiniteObjective(ImIsacException):
    """
    The objective evaluated to NaN or infinity, usually a channel or
    configuration pathology.
    """

    code = "non_finite_objective"


class SingularEffectiveChannel(ImIsacException):
    """
    The effective channel seen by the digital precoder is rank deficient
    beyond what regularization can handle.
    """

    code = "singular_effective_channel"

    def __init__(self, condition_number: float):
        super().__init__(
            f"Effective channel is singular (condition number {condition_number:.3e})."
        )
        self.condition_number = condition_number

    def details(self) -> Dict[str, Any]:
        return {"condition_number": self.condition_number}


class InsufficientObservations(ImIsacException):
    """
    The stacked pilot system has fewer equations than unknowns and no ridge
    regularization was requested.
    """

    code = "insufficient_observations"


class RankDeficient(ImIsacException):
    """
    The stacked pilot system is too badly conditioned for plain least squares.
    """

    code = "rank_deficient"

    def __init__(self, condition_number: float):
        super().__init__(
            f"Stacked observation matrix is rank deficient "
            f"(condition number {condition_number:.3e}); use a ridge term."
        )
        self.condition_number = condition_number

    def details(self) -> Dict[str, Any]:
        return {"condition_number": self.condition_number}


class UnsupportedMultiLayerModulation(ImIsacException):
    """
    Only the radiating (last) layer may be time-modulated.
    """

    code = "unsupported_multilayer_modulation"


class InfeasibleSplit(ImIsacException):
    """
    The requested DC (communication) coefficients lie outside the convex hull
    of the element's constraint family, so no slot average reaches them.
    """

    code = "infeasible_split"

    def __init__(self, requested: float, max_feasible_magnitude: float):
        super().__init__(
            f"Requested DC magnitude {requested} exceeds the feasible "
            f"maximum {max_feasible_magnitude}."
        )
        self.requested = requested
        self.max_feasible_magnitude = max_feasible_magnitude

    def details(self) -> Dict[str, Any]:
        return {
            "requested": self.requested,
            "max_feasible_magnitude": self.max_feasible_magnitude,
        }


class ScenarioParseError(ImIsacException):
    """
    The scenario file is not well-formed JSON/YAML.
    """

    code = "parse_error"

    def __init__(self, message: str, line: Optional[int], column: Optional[int]):
        location = "" if line is None else f" (line {line}, column {column})"
        super().__init__(f"{message}{location}")
        self.line = line
        self.column = column

    def details(self) -> Dict[str, Any]:
        return {"line": self.line, "column": self.column}


class ScenarioValidationError(ImIsacException):
    """
    The scenario document parsed but failed validation. All problems are
    reported at once as (field path, message) pairs.
    """

    code = "validation_error"

    def __init__(self, errors: List[Tuple[str, str]]):
        lines = "\n".join(f"  {path}: {message}" for path, message in errors)
        super().__init__(f"Scenario failed validation:\n{lines}")
        self.errors = list(errors)

    def details(self) -> Dict[str, Any]:
        return {"errors": [{"field": p, "message": m} for p, m in self.errors]}


class HeterogeneousResults(ImIsacException):
    """
    Plot data was requested for results of different kinds.
    """

    code = "heterogeneous_results"


class UnknownCommand(ImIsacException):
    """
    The runner was asked for a command it does not provide.
    """

    code = "unknown_command"


class UnsupportedArchitecture(ImIsacException):
    """
    The requested operation needs a capability the architecture lacks, such as
    digital precoding for alternating optimization.
    """

    code = "unsupported_architecture"
