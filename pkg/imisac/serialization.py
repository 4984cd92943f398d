"""
Conversion of result objects to JSON-compatible documents and tidy CSV rows.

Complex numbers are written as [re, im] pairs. Floats keep full double
precision: json renders them in the shortest form that reads back to the
same value, so reruns with the same config and seed give identical bytes.
"""

import csv
import json
import math
from typing import Any, Dict, Iterable, List, Mapping, Sequence

import numpy as np

from imisac.base_types import BasebandProcessor, ReconfigState
from imisac.estimate import EstimationReport, NmsePoint
from imisac.metrics import ScenarioResult
from imisac.optimize import OptimizationTrace, ParetoPoint
from imisac.waveform import HarmonicLeakage, SplitDesign


def real_to_json(value: float) -> Any:
    """
    A finite float, or None for NaN and infinities which JSON cannot hold.
    """
    value = float(value)
    return value if math.isfinite(value) else None


def complex_to_json(array: Any) -> Any:
    """
    Nested lists of [re, im] pairs with the shape of array.
    """
    array = np.asarray(array, dtype=complex)
    if array.ndim == 0:
        z = complex(array)
        return [real_to_json(z.real), real_to_json(z.imag)]
    return [complex_to_json(item) for item in array]


def complex_from_json(doc: Any) -> np.ndarray:
    data = np.asarray(doc, dtype=float)
    return data[..., 0] + 1j * data[..., 1]


def reals_to_json(values: Iterable[float]) -> List[Any]:
    return [real_to_json(v) for v in values]


def scenario_result_to_dict(result: ScenarioResult) -> Dict[str, Any]:
    return {
        "sum_rate": real_to_json(result.sum_rate),
        "per_user_sinr": reals_to_json(result.per_user_sinr),
        "per_user_rate": reals_to_json(result.per_user_rate),
        "beampattern": [
            {"angle_deg": real_to_json(a), "power": real_to_json(p)}
            for a, p in result.beampattern
        ],
        "target_power": reals_to_json(result.target_power),
        "worst_target_power": real_to_json(result.worst_target_power),
        "objective_trace": reals_to_json(result.objective_trace),
        "seed": result.seed,
        "config_hash": result.config_hash,
    }


def state_to_dict(state: ReconfigState) -> Dict[str, Any]:
    return {
        "state_hash": state.state_hash(),
        "coefficients": [complex_to_json(q) for q in state.coefficients],
    }


def baseband_to_dict(baseband: BasebandProcessor) -> Dict[str, Any]:
    return {
        "matrix": complex_to_json(baseband.matrix),
        "power": real_to_json(baseband.power),
        "power_budget": real_to_json(baseband.power_budget),
    }


def trace_to_dict(trace: OptimizationTrace) -> Dict[str, Any]:
    return {
        "objective_trace": reals_to_json(trace.objective_trace),
        "final_objective": real_to_json(trace.final_objective),
        "converged": trace.converged,
        "iterations": trace.iterations,
        "termination": trace.termination.value,
        "state": state_to_dict(trace.state),
        "baseband": baseband_to_dict(trace.baseband),
    }


def estimation_report_to_dict(report: EstimationReport) -> Dict[str, Any]:
    return {
        "estimate": complex_to_json(report.estimate),
        "nmse": None if report.nmse is None else real_to_json(report.nmse),
        "condition_number": real_to_json(report.condition_number),
        "num_slots": report.num_slots,
        "num_observations": report.num_observations,
        "num_unknowns": report.num_unknowns,
    }


def nmse_point_to_dict(point: NmsePoint) -> Dict[str, Any]:
    return {
        "num_slots": point.num_slots,
        "mean_nmse": real_to_json(point.mean_nmse),
        "mean_condition_number": real_to_json(point.mean_condition_number),
    }


def pareto_point_to_dict(point: ParetoPoint) -> Dict[str, Any]:
    return {
        "weight": real_to_json(point.weight),
        "rate": real_to_json(point.rate),
        "worst_target_power": real_to_json(point.worst_target_power),
        "objective": real_to_json(point.objective),
    }


def split_design_to_dict(design: SplitDesign) -> Dict[str, Any]:
    return {
        "num_slots": design.pattern.num_slots,
        "period": real_to_json(design.pattern.period),
        "sequences": complex_to_json(design.pattern.sequences),
        "dc": complex_to_json(design.dc),
        "fundamental": complex_to_json(design.fundamental),
        "comm_error": real_to_json(design.comm_error),
        "sense_gain": real_to_json(design.sense_gain),
    }


def leakage_to_dict(leakage: HarmonicLeakage) -> Dict[str, Any]:
    return {name: real_to_json(value) for name, value in leakage._asdict().items()}


def dumps(doc: Mapping[str, Any]) -> str:
    """
    Deterministic, human-readable JSON text of a result document.
    """
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _cell(value: Any) -> Any:
    if isinstance(value, float):
        return repr(float(value)) if math.isfinite(value) else ""
    return value


def write_csv(path: str, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> int:
    """
    Write one observation per row under a header line. Returns the number of
    data rows written.
    """
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(v) for k, v in row.items()})
            count += 1
    return count
