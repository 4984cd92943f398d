import numpy as np
import pytest

from imisac.base_types import (
    ArchitectureKind,
    ArchitectureSpec,
    BasebandProcessor,
    FeedingMatrix,
    FeedingTopology,
    LayerSpec,
    PowerNormalization,
    ReconfigState,
    planar_grid,
)
from imisac.constraints import ConstraintFamily
from imisac.exception import (
    ConstraintViolation,
    DimensionMismatch,
    LayerOutOfRange,
    PowerBudgetExceeded,
)
from imisac.framework import (
    apply_parameters,
    build_effective_matrix,
    build_feeds,
    layer_product,
    validate_architecture,
)

FREQ = 28e9


def _custom_spec(sizes, num_rf_chains, constraint=None):
    constraint = constraint or ConstraintFamily.unit_modulus()
    layers = tuple(
        LayerSpec(
            positions=planar_grid(n, 0.005, z=0.01 * l),
            feeding=FeedingTopology.DENSE_DIFFRACTION,
            constraint=constraint,
        )
        for l, n in enumerate(sizes)
    )
    return ArchitectureSpec(
        kind=ArchitectureKind.CUSTOM,
        layers=layers,
        num_rf_chains=num_rf_chains,
        num_streams=num_rf_chains,
        carrier_frequency=FREQ,
        layer_spacing=0.01,
        feed_positions=planar_grid(num_rf_chains, 0.005, z=-0.01),
    )


def _random_feeds(sizes, num_rf_chains, rng, contractive=False):
    feeds = []
    cols = num_rf_chains
    for l, n in enumerate(sizes):
        T = rng.normal(size=(n, cols)) + 1j * rng.normal(size=(n, cols))
        if contractive:
            T /= np.linalg.norm(T, 2) * rng.uniform(1.0, 2.0)
        feeds.append(FeedingMatrix(l, T, FeedingTopology.DENSE_DIFFRACTION))
        cols = n
    return feeds


def test_ris_with_two_rf_chains_is_rejected():
    spec = ArchitectureSpec.create_ris(16, FREQ)._replace(num_rf_chains=2)
    report = validate_architecture(spec)
    assert not report.passed
    assert any("RIS requires single RF chain" in m for m in report.messages())


def test_dma_with_unit_modulus_is_rejected():
    spec = ArchitectureSpec.create_dma(8, 2, FREQ)
    layer = spec.layers[0]._replace(constraint=ConstraintFamily.unit_modulus())
    report = validate_architecture(spec._replace(layers=(layer,)))
    assert any("DMA requires Lorentzian" in m for m in report.messages())
    assert report.violations[0].field == "layers.constraint"


@pytest.mark.parametrize(
    "spec",
    [
        ArchitectureSpec.create_sim(4, 2, 2, FREQ),
        ArchitectureSpec.create_ris(16, FREQ),
        ArchitectureSpec.create_dma(16, 4, FREQ),
        ArchitectureSpec.create_rhs(16, 4, FREQ, amplitude_levels=(0.0, 0.5, 1.0)),
    ],
)
def test_factory_specs_pass(spec):
    report = validate_architecture(spec)
    assert report.passed, report.messages()


def test_validation_collects_every_violation():
    spec = ArchitectureSpec.create_sim(4, 2, 2, FREQ)._replace(
        num_streams=3, power_budget=0.0, layer_spacing=0.0
    )
    fields = {v.field for v in validate_architecture(spec).violations}
    assert {"num_streams", "power_budget", "layer_spacing"} <= fields


def test_identity_composition():
    n = 5
    spec = _custom_spec([n], n)
    feeds = [FeedingMatrix(0, np.eye(n, dtype=complex), FeedingTopology.DENSE_DIFFRACTION)]
    state = ReconfigState.from_coefficients([np.ones(n)])
    V = BasebandProcessor(np.eye(n, dtype=complex), float(n))
    E = build_effective_matrix(spec, V, feeds, state)
    np.testing.assert_array_equal(E.matrix, np.eye(n))
    assert E.spec_hash == spec.spec_hash()
    assert E.state_hash == state.state_hash()


def test_ris_scalar_chain():
    tau = 0.7 * np.exp(0.3j)
    spec = ArchitectureSpec.create_ris(8, FREQ, carrier_attenuation=tau, power_budget=2.0)
    state = ReconfigState.random(spec, np.random.default_rng(0))
    V = BasebandProcessor.for_architecture(spec)
    E = build_effective_matrix(spec, V, build_feeds(spec), state)
    phases = state.phases(0)
    np.testing.assert_allclose(E.matrix[:, 0], tau * np.sqrt(2.0) * np.exp(1j * phases), atol=1e-12)
    assert E.matrix.shape == (8, 1)


def test_sim_matches_loop_product():
    spec = ArchitectureSpec.create_sim(4, 2, 2, FREQ, power_normalization=PowerNormalization.NONE)
    feeds = build_feeds(spec)
    state = ReconfigState.random(spec, np.random.default_rng(1))
    V = BasebandProcessor.equal_power(2, 2, 1.0)
    E = build_effective_matrix(spec, V, feeds, state).matrix

    T0, T1 = feeds[0].matrix, feeds[1].matrix
    q0, q1 = state.coefficients
    expected = np.zeros((4, 2), dtype=complex)
    for i in range(4):
        for s in range(2):
            for j in range(4):
                for k in range(2):
                    expected[i, s] += q1[i] * T1[i, j] * q0[j] * T0[j, k] * V.matrix[k, s]
    np.testing.assert_allclose(E, expected, rtol=0, atol=1e-10 * np.max(np.abs(expected)))


def test_layerwise_equals_one_shot():
    rng = np.random.default_rng(2)
    sizes = [64, 48, 32, 64]
    spec = _custom_spec(sizes, 4)
    feeds = _random_feeds(sizes, 4, rng)
    state = ReconfigState.random(spec, rng)
    E = layer_product(feeds, state)
    expected = np.eye(4)
    for feed, q in zip(feeds, state.coefficients):
        expected = np.diag(q) @ feed.matrix @ expected
    np.testing.assert_allclose(E, expected, rtol=1e-10, atol=1e-10 * np.max(np.abs(expected)))


def test_passive_layers_do_not_amplify():
    rng = np.random.default_rng(3)
    sizes = [6, 6, 6]
    spec = _custom_spec(sizes, 3, ConstraintFamily.amplitude_range(0.0, 1.0))
    feeds = _random_feeds(sizes, 3, rng, contractive=True)
    state = ReconfigState.random(spec, rng)
    V = BasebandProcessor.equal_power(3, 3, 3.0)
    E = build_effective_matrix(spec, V, feeds, state).matrix
    assert np.linalg.norm(E, 2) <= np.linalg.norm(V.matrix, 2) + 1e-12


def test_end_to_end_normalization_preserves_norm():
    spec = ArchitectureSpec.create_sim(9, 3, 2, FREQ)
    state = ReconfigState.random(spec, np.random.default_rng(4))
    V = BasebandProcessor.equal_power(2, 2, 1.0)
    E = build_effective_matrix(spec, V, build_feeds(spec), state).matrix
    assert np.linalg.norm(E) == pytest.approx(np.linalg.norm(V.matrix), rel=1e-12)


def test_per_layer_normalization_scales_feeds():
    spec = ArchitectureSpec.create_sim(
        9, 3, 2, FREQ, power_normalization=PowerNormalization.PER_LAYER
    )
    for feed in build_feeds(spec):
        assert np.linalg.norm(feed.matrix, 2) == pytest.approx(1.0, rel=1e-12)


def test_infeasible_state_is_not_projected():
    spec = ArchitectureSpec.create_ris(4, FREQ)
    state = ReconfigState.from_coefficients([np.array([1.0, 1.0, 2.0, 1.0])])
    with pytest.raises(ConstraintViolation) as err:
        build_effective_matrix(spec, BasebandProcessor.carrier(1.0), build_feeds(spec), state)
    assert err.value.layer == 0


def test_drift_below_tolerance_is_accepted():
    spec = ArchitectureSpec.create_ris(4, FREQ)
    state = ReconfigState.from_coefficients([np.full(4, 1.0 + 1e-11)])
    build_effective_matrix(spec, BasebandProcessor.carrier(1.0), build_feeds(spec), state)


def test_power_budget_is_enforced():
    spec = ArchitectureSpec.create_dma(8, 2, FREQ)
    V = BasebandProcessor(np.eye(2, dtype=complex), 1.0)
    with pytest.raises(PowerBudgetExceeded):
        build_effective_matrix(spec, V, build_feeds(spec), ReconfigState.neutral(spec))


def test_dimension_mismatch_names_layer():
    spec = ArchitectureSpec.create_sim(4, 2, 2, FREQ)
    feeds = build_feeds(spec)
    state = ReconfigState.neutral(spec).with_layer(1, np.ones(3))
    with pytest.raises(DimensionMismatch) as err:
        build_effective_matrix(spec, BasebandProcessor.equal_power(2, 2, 1.0), feeds, state)
    assert err.value.layer == 1
    with pytest.raises(DimensionMismatch):
        build_effective_matrix(
            spec, BasebandProcessor.equal_power(3, 2, 1.0), feeds, ReconfigState.neutral(spec)
        )


def test_apply_parameters_per_family():
    ris = ArchitectureSpec.create_ris(2, FREQ)
    state = apply_parameters(ris, ReconfigState.neutral(ris), 0, [[np.pi / 4, 3.0], [0.0, 1.0]])
    np.testing.assert_allclose(state.coefficients[0][0], np.exp(1j * np.pi / 4), atol=1e-15)

    rhs = ArchitectureSpec.create_rhs(2, 1, FREQ)
    state = apply_parameters(rhs, ReconfigState.neutral(rhs), 0, [[0.0, 1.7], [1.0, 0.4]])
    np.testing.assert_allclose(state.coefficients[0], [1.0, 0.4])

    dma = ArchitectureSpec.create_dma(2, 1, FREQ)
    state = apply_parameters(dma, ReconfigState.neutral(dma), 0, [[np.pi / 2, 0.0], [1.0, 0.0]])
    q = state.coefficients[0]
    assert q[0] == pytest.approx(1j, abs=1e-15)
    np.testing.assert_allclose(np.abs(q - 0.5j), 0.5, atol=1e-12)


def test_apply_parameters_leaves_input_untouched():
    spec = ArchitectureSpec.create_sim(4, 2, 2, FREQ)
    state = ReconfigState.neutral(spec)
    raw = np.column_stack([np.linspace(0, 3, 4), np.ones(4)])
    updated = apply_parameters(spec, state, 1, raw)
    np.testing.assert_array_equal(state.coefficients[1], np.ones(4))
    np.testing.assert_allclose(updated.phases(1), np.linspace(0, 3, 4), atol=1e-12)
    assert spec.layers[1].constraint.max_error(updated.coefficients[1]) <= 1e-12


def test_apply_parameters_rejects_bad_layer_and_shape():
    spec = ArchitectureSpec.create_sim(4, 2, 2, FREQ)
    with pytest.raises(LayerOutOfRange):
        apply_parameters(spec, ReconfigState.neutral(spec), 2, np.zeros((4, 2)))
    with pytest.raises(DimensionMismatch):
        apply_parameters(spec, ReconfigState.neutral(spec), 0, np.zeros((3, 2)))


def test_spec_hash_is_stable_and_sensitive():
    a = ArchitectureSpec.create_sim(4, 2, 2, FREQ)
    b = ArchitectureSpec.create_sim(4, 2, 2, FREQ)
    assert a.spec_hash() == b.spec_hash()
    assert a.spec_hash() != ArchitectureSpec.create_sim(4, 2, 2, 2 * FREQ).spec_hash()
