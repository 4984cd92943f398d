import numpy as np
import pytest

from imisac.base_types import (
    ArchitectureSpec,
    BasebandProcessor,
    PowerNormalization,
    ReconfigState,
)
from imisac.channel import farfield_steering
from imisac.constraints import ConstraintFamily
from imisac.exception import (
    DimensionMismatch,
    InfeasibleSplit,
    UnsupportedMultiLayerModulation,
)
from imisac.framework import build_effective_matrix, build_feeds
from imisac.metrics import beam_pattern
from imisac.waveform import (
    TimeModulationPattern,
    design_split_pattern,
    harmonic_beam_pattern,
    harmonic_coefficients,
    harmonic_leakage,
    harmonic_matrices,
)

FREQ = 28e9


def _random_pattern(seed, n=6, P=8):
    rng = np.random.default_rng(seed)
    return TimeModulationPattern(np.exp(1j * rng.uniform(0, 2 * np.pi, (n, P))))


def _ris(n=16):
    spec = ArchitectureSpec.create_ris(n, FREQ)
    return spec, build_feeds(spec), BasebandProcessor.for_architecture(spec)


def test_constant_pattern_is_dc_only():
    q = np.exp(1j * np.array([0.1, 2.0, -1.3]))
    c = harmonic_coefficients(TimeModulationPattern.constant(q, 4)).coefficients
    np.testing.assert_allclose(c[:, 0], q, atol=1e-15)
    np.testing.assert_allclose(c[:, 1:], 0.0, atol=1e-15)


def test_alternating_sign_moves_power_to_first_harmonic():
    c = harmonic_coefficients(TimeModulationPattern(np.array([[1.0, -1.0]]))).coefficients
    np.testing.assert_allclose(c[0], [0.0, 1.0], atol=1e-15)


@pytest.mark.parametrize("P", range(1, 17))
def test_parseval_per_element(P):
    rng = np.random.default_rng(P)
    # 1000 patterns across the sixteen slot counts, with free amplitudes
    for _ in range(63 if P <= 8 else 62):
        n = int(rng.integers(1, 6))
        q = rng.normal(size=(n, P)) + 1j * rng.normal(size=(n, P))
        c = harmonic_coefficients(TimeModulationPattern(q)).coefficients
        np.testing.assert_allclose(
            np.sum(np.abs(c) ** 2, axis=1), np.mean(np.abs(q) ** 2, axis=1), rtol=1e-12
        )


def test_direct_summation():
    pattern = _random_pattern(1, n=2, P=5)
    c = harmonic_coefficients(pattern).coefficients
    q = pattern.sequences
    for n in range(2):
        for k in range(5):
            direct = sum(q[n, p] * np.exp(-2j * np.pi * k * p / 5) for p in range(5)) / 5
            assert c[n, k] == pytest.approx(direct, abs=1e-12)


def test_circular_shift_multiplies_by_phase():
    pattern = _random_pattern(2)
    P, s = pattern.num_slots, 3
    shifted = TimeModulationPattern(np.roll(pattern.sequences, s, axis=1))
    c = harmonic_coefficients(pattern).coefficients
    c_shifted = harmonic_coefficients(shifted).coefficients
    k = np.arange(P)
    np.testing.assert_allclose(c_shifted, c * np.exp(-2j * np.pi * k * s / P), atol=1e-12)


def test_dc_magnitude_bound():
    c = harmonic_coefficients(_random_pattern(3)).coefficients
    assert np.all(np.abs(c[:, 0]) < 1.0)
    constant = TimeModulationPattern.constant(np.exp(1j * np.arange(4)), 8)
    np.testing.assert_allclose(np.abs(harmonic_coefficients(constant).coefficients[:, 0]), 1.0)


def test_constant_pattern_has_no_first_harmonic_beam():
    spec, feeds, V = _ris()
    decomp = harmonic_coefficients(TimeModulationPattern.constant(np.ones(16), 4))
    assert harmonic_beam_pattern(decomp, feeds, V, spec, 1, np.ones(16)) == pytest.approx(
        0.0, abs=1e-24
    )


def test_alternating_pattern_forms_coherent_harmonic_beam():
    n = 16
    spec, feeds, V = _ris(n)
    decomp = harmonic_coefficients(TimeModulationPattern(np.tile([1.0, -1.0], (n, 1))))
    power = harmonic_beam_pattern(decomp, feeds, V, spec, 1, np.ones(n))
    assert power == pytest.approx(n ** 2, rel=1e-12)


def test_harmonic_powers_sum_to_time_average():
    n = 6
    spec, feeds, V = _ris(n)
    pattern = _random_pattern(4, n=n, P=8)
    a = np.exp(1j * np.random.default_rng(5).uniform(0, 2 * np.pi, n))
    decomp = harmonic_coefficients(pattern)
    total = sum(harmonic_beam_pattern(decomp, feeds, V, spec, k, a) for k in range(8))
    q = pattern.sequences
    expected = 0.0
    for i in range(n):
        for m in range(n):
            expected += np.conj(a[i]) * a[m] * np.mean(q[i] * np.conj(q[m]))
    assert total == pytest.approx(expected.real, rel=1e-12)
    assert abs(expected.imag) < 1e-12


def test_dc_of_constant_pattern_matches_static_beam():
    spec = ArchitectureSpec.create_sim(9, 2, 2, FREQ, power_normalization=PowerNormalization.NONE)
    feeds = build_feeds(spec)
    V = BasebandProcessor.equal_power(2, 2, 1.0)
    state = ReconfigState.random(spec, np.random.default_rng(6))
    a = farfield_steering(spec.aperture_positions, (0.2, 0.0), spec.wavelength)
    decomp = harmonic_coefficients(TimeModulationPattern.constant(state.coefficients[-1], 4))
    harmonic = harmonic_beam_pattern(decomp, feeds, V, spec, 0, a, state=state)
    static = beam_pattern(build_effective_matrix(spec, V, feeds, state).matrix, a)
    assert harmonic == pytest.approx(static, rel=1e-12)


def test_end_to_end_normalization_spans_all_harmonics():
    spec = ArchitectureSpec.create_sim(9, 2, 2, FREQ)
    feeds = build_feeds(spec)
    V = BasebandProcessor.equal_power(2, 2, 1.0)
    decomp = harmonic_coefficients(_random_pattern(7, n=9, P=4))
    matrices = harmonic_matrices(decomp, feeds, V, spec)
    assert sum(np.sum(np.abs(E) ** 2) for E in matrices) == pytest.approx(1.0, rel=1e-12)


def test_only_radiating_layer_is_modulated():
    spec = ArchitectureSpec.create_sim(4, 2, 1, FREQ)
    feeds = build_feeds(spec)
    V = BasebandProcessor.for_architecture(spec)
    decomp = harmonic_coefficients(_random_pattern(8, n=4, P=2))
    with pytest.raises(UnsupportedMultiLayerModulation):
        harmonic_matrices(decomp, feeds, V, spec, modulated_layer=0)
    assert len(harmonic_matrices(decomp, feeds, V, spec, modulated_layer=1)) == 2
    with pytest.raises(DimensionMismatch):
        harmonic_matrices(harmonic_coefficients(_random_pattern(8, n=5)), feeds, V, spec)


def test_leakage_of_pure_sensing_ramp():
    n = 8
    spec, feeds, V = _ris(n)
    a_sense = farfield_steering(spec.aperture_positions, (0.4, 0.0), spec.wavelength)
    a_comm = farfield_steering(spec.aperture_positions, (-0.3, 0.0), spec.wavelength)
    ramp = np.angle(a_sense)[:, None] + 2 * np.pi * np.arange(4) / 4
    decomp = harmonic_coefficients(TimeModulationPattern(np.exp(1j * ramp)))
    leakage = harmonic_leakage(decomp, feeds, V, spec, a_comm, a_sense)
    assert leakage.sense_power == pytest.approx(n ** 2, rel=1e-12)
    assert leakage.comm_power == pytest.approx(0.0, abs=1e-20)
    assert leakage.comm_into_sense == pytest.approx(0.0, abs=1e-20)
    assert 0.0 <= leakage.sense_into_comm < n ** 2


def test_split_without_sensing_is_constant():
    spec, _, _ = _ris(8)
    phases = np.linspace(-np.pi, np.pi, 8, endpoint=False)
    design = design_split_pattern(spec, phases, (0.3, 0.0), P=4, seed=0, sense_weight=0.0)
    seq = design.pattern.sequences
    np.testing.assert_array_equal(seq, np.repeat(seq[:, :1], 4, axis=1))
    np.testing.assert_allclose(design.dc, np.exp(1j * phases), atol=1e-12)
    assert design.comm_error == pytest.approx(0.0, abs=1e-24)


@pytest.mark.parametrize("n", [4, 9, 16])
def test_split_for_sensing_reaches_coherent_gain(n):
    spec, _, _ = _ris(n)
    design = design_split_pattern(spec, np.zeros(n), (0.3, 0.0), P=8, seed=1, comm_weight=0.0)
    assert design.sense_gain >= 0.8 * n ** 2
    assert design.pattern.num_slots == 8


def test_split_output_is_feasible():
    spec, _, _ = _ris(9)
    design = design_split_pattern(spec, np.full(9, 0.5), (-0.2, 0.0), P=4, seed=2)
    family = ConstraintFamily.unit_modulus()
    assert design.pattern.max_error(family) <= 1e-12
    c = harmonic_coefficients(design.pattern).coefficients
    np.testing.assert_allclose(np.sum(np.abs(c) ** 2, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(design.dc, c[:, 0])
    np.testing.assert_allclose(design.fundamental, c[:, 1])


def test_split_rejects_infeasible_magnitude():
    spec, _, _ = _ris(4)
    with pytest.raises(InfeasibleSplit) as err:
        design_split_pattern(spec, np.zeros(4), (0.0, 0.0), P=4, seed=0, comm_magnitude=1.5)
    assert err.value.details() == {"requested": 1.5, "max_feasible_magnitude": 1.0}


def test_split_checks_lorentzian_hull():
    spec = ArchitectureSpec.create_dma(4, 1, FREQ)
    with pytest.raises(InfeasibleSplit) as err:
        design_split_pattern(spec, np.zeros(4), (0.0, 0.0), P=4, seed=0, sense_weight=0.0)
    assert err.value.details() == {"requested": 1.0, "max_feasible_magnitude": 0.0}
    design = design_split_pattern(
        spec, np.full(4, np.pi / 2), (0.0, 0.0), P=4, seed=0, sense_weight=0.0
    )
    assert design.comm_error < 1e-20


def test_split_needs_two_slots():
    spec, _, _ = _ris(4)
    with pytest.raises(DimensionMismatch):
        design_split_pattern(spec, np.zeros(4), (0.0, 0.0), P=1, seed=0)
