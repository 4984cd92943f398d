import numpy as np
import pytest
from scipy import stats

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
from imisac.channel import (
    ChannelModel,
    ChannelSet,
    FieldRegime,
    GeometryContext,
    generate_user_channels,
)
from imisac.constraints import ConstraintFamily
from imisac.exception import (
    EmptyGrid,
    ScenarioValidationError,
    SingularEffectiveChannel,
    UnsupportedArchitecture,
)
from imisac.framework import build_effective_matrix, build_feeds, layer_product
from imisac.metrics import sum_rate
from imisac.optimize import (
    BeampatternMask,
    MatrixObjective,
    ObjectiveKind,
    OptimizerConfig,
    ParameterObjective,
    StepRule,
    TerminationReason,
    alternating_optimize,
    check_gradient,
    gradient_ascent,
    optimizer_for,
    pareto_sweep,
    precoder_step,
    project_amplitude,
    project_lorentzian,
    project_unit_modulus,
    rzf_precoder,
    water_filling,
    zf_precoder,
)

FREQ = 28e9


def _channels(spec, num_users, seed, model=ChannelModel.RAYLEIGH, noise_power=0.1, targets=(0.3,)):
    geometry = GeometryContext.from_spec(spec)
    rng = np.random.default_rng(seed)
    users = [
        geometry.center + 30.0 * np.array([np.sin(a), 0.0, np.cos(a)])
        for a in rng.uniform(-1.0, 1.0, num_users)
    ]
    return generate_user_channels(
        geometry,
        users,
        model,
        seed=seed,
        noise_power=noise_power,
        pathloss=False,
        target_directions=[(t, 0.0) for t in targets],
    )


def _dense_single_layer(num_elements, feed, num_rf_chains=1):
    layer = LayerSpec(
        positions=planar_grid(num_elements, 0.005, z=0.01),
        feeding=FeedingTopology.DENSE_DIFFRACTION,
        constraint=ConstraintFamily.unit_modulus(),
    )
    spec = ArchitectureSpec(
        kind=ArchitectureKind.CUSTOM,
        layers=(layer,),
        num_rf_chains=num_rf_chains,
        num_streams=num_rf_chains,
        carrier_frequency=FREQ,
        feed_positions=planar_grid(num_rf_chains, 0.005),
    )
    return spec, [FeedingMatrix(0, feed, FeedingTopology.DENSE_DIFFRACTION)]


def _phase_only_waveguide(num_elements):
    # Two waveguides of unit-modulus elements, lossless and phase-free.
    spec = ArchitectureSpec.create_dma(num_elements, 2, FREQ, num_streams=1)
    layer = spec.layers[0]._replace(
        constraint=ConstraintFamily.unit_modulus(),
        arclength=np.zeros(num_elements),
    )
    return spec._replace(
        kind=ArchitectureKind.CUSTOM,
        layers=(layer,),
        power_normalization=PowerNormalization.END_TO_END,
    )


def test_projections_are_exported():
    assert project_unit_modulus(3 + 4j) == pytest.approx(0.6 + 0.8j)
    assert project_lorentzian(0.5j) == pytest.approx(0.5 + 0.5j)
    assert project_amplitude(0.375, levels=(0, 0.25, 0.5, 0.75, 1)) == 0.25


def test_config_violations():
    cfg = OptimizerConfig(max_iters=0, weight=1.5, tolerance=0.0, shrink=1.0)
    fields = {v.field for v in cfg.violations()}
    assert fields == {"max_iters", "weight", "tolerance", "shrink"}
    assert OptimizerConfig().violations() == []


def test_single_element_closed_form():
    spec = ArchitectureSpec.create_ris(1, FREQ, power_budget=2.0)
    h = 0.8 * np.exp(1.1j)
    channels = ChannelSet(np.array([[h]]), np.zeros((0, 1)), 0.5, spec.wavelength, FieldRegime.FAR_FIELD)
    trace = gradient_ascent(
        spec,
        BasebandProcessor.for_architecture(spec),
        build_feeds(spec),
        ReconfigState.neutral(spec),
        channels,
        OptimizerConfig(),
    )
    assert trace.final_objective == pytest.approx(np.log2(1 + abs(h) ** 2 * 2.0 / 0.5), abs=1e-6)


def test_matched_filter_ris_reaches_closed_form():
    spec = ArchitectureSpec.create_ris(64, FREQ)._replace(
        power_normalization=PowerNormalization.END_TO_END
    )
    channels = _channels(spec, 1, seed=3, model=ChannelModel.LOS)
    cfg = OptimizerConfig(tolerance=1e-12, max_iters=500, num_starts=1)
    trace = gradient_ascent(
        spec,
        BasebandProcessor.for_architecture(spec),
        build_feeds(spec),
        ReconfigState.neutral(spec),
        channels,
        cfg,
    )
    assert trace.final_objective == pytest.approx(np.log2(1 + 64 / 0.1), abs=1e-4)


@pytest.mark.parametrize("seed", range(20))
def test_three_elements_match_exhaustive_grid(seed):
    rng = np.random.default_rng(seed)
    feed = rng.normal(size=(3, 1)) + 1j * rng.normal(size=(3, 1))
    a = np.exp(1j * rng.uniform(0, 2 * np.pi, 3))
    spec, feeds = _dense_single_layer(3, feed)
    channels = ChannelSet(np.ones((1, 3)), a[np.newaxis, :], 1.0, spec.wavelength, FieldRegime.FAR_FIELD)
    cfg = OptimizerConfig(objective=ObjectiveKind.BEAM_PATTERN_GAIN, seed=1)
    V = BasebandProcessor(np.ones((1, 1), dtype=complex), 1.0)
    trace = gradient_ascent(spec, V, feeds, ReconfigState.neutral(spec), channels, cfg)

    c = np.conj(a) * feed[:, 0]
    levels = np.exp(2j * np.pi * np.arange(64) / 64)
    total = (
        c[0] * levels[:, None, None] + c[1] * levels[None, :, None] + c[2] * levels[None, None, :]
    )
    grid_best = float(np.max(np.abs(total) ** 2))
    assert trace.final_objective >= 0.999 * grid_best


@pytest.mark.parametrize(
    "objective",
    [ObjectiveKind.SUM_RATE, ObjectiveKind.BEAM_PATTERN_GAIN, ObjectiveKind.WEIGHTED_ISAC],
)
def test_backtracking_trace_is_nondecreasing(objective):
    spec = ArchitectureSpec.create_sim(9, 2, 2, FREQ)
    channels = _channels(spec, 2, seed=4)
    cfg = OptimizerConfig(objective=objective, max_iters=60, num_starts=2, rate_ref=2.0, power_ref=0.5)
    trace = gradient_ascent(
        spec,
        BasebandProcessor.for_architecture(spec),
        build_feeds(spec),
        ReconfigState.random(spec, np.random.default_rng(0)),
        channels,
        cfg,
    )
    assert np.all(np.diff(trace.objective_trace) >= 0.0)
    assert trace.iterations == len(trace.objective_trace) - 1
    assert trace.converged == (trace.termination != TerminationReason.MAX_ITERS)


def test_gradient_ascent_is_deterministic():
    spec = ArchitectureSpec.create_sim(4, 2, 2, FREQ)
    channels = _channels(spec, 2, seed=5)
    args = (
        spec,
        BasebandProcessor.for_architecture(spec),
        build_feeds(spec),
        ReconfigState.neutral(spec),
        channels,
        OptimizerConfig(max_iters=20, seed=9),
    )
    first, second = gradient_ascent(*args), gradient_ascent(*args)
    assert first.objective_trace == second.objective_trace
    for q1, q2 in zip(first.state.coefficients, second.state.coefficients):
        np.testing.assert_array_equal(q1, q2)


def test_fixed_step_rule_runs_to_max_iters():
    spec = ArchitectureSpec.create_ris(8, FREQ)
    channels = _channels(spec, 1, seed=6)
    cfg = OptimizerConfig(step_rule=StepRule.FIXED, step_size=1e-3, max_iters=5, tolerance=1e-15, num_starts=1)
    trace = gradient_ascent(
        spec,
        BasebandProcessor.for_architecture(spec),
        build_feeds(spec),
        ReconfigState.neutral(spec),
        channels,
        cfg,
    )
    assert trace.iterations == 5
    assert trace.termination == TerminationReason.MAX_ITERS
    assert not trace.converged


def test_amplitude_set_result_is_on_levels():
    levels = (0.0, 0.25, 0.5, 0.75, 1.0)
    spec = ArchitectureSpec.create_rhs(16, 2, FREQ, amplitude_levels=levels)
    channels = _channels(spec, 2, seed=8)
    V = BasebandProcessor.for_architecture(spec)
    feeds = build_feeds(spec)
    trace = gradient_ascent(
        spec, V, feeds, ReconfigState.neutral(spec), channels, OptimizerConfig(max_iters=30)
    )
    assert spec.layers[0].constraint.max_error(trace.state.coefficients[0]) == 0.0
    E = build_effective_matrix(spec, V, feeds, trace.state).matrix
    assert trace.final_objective == pytest.approx(sum_rate(channels.H, E, 0.1)[0], rel=1e-12)


def _gradient_cases():
    sim = ArchitectureSpec.create_sim(8, 2, 2, FREQ)
    dma = ArchitectureSpec.create_dma(8, 2, FREQ)
    rhs = ArchitectureSpec.create_rhs(8, 2, FREQ)
    return [("sim", sim), ("dma", dma), ("rhs", rhs)]


@pytest.mark.parametrize("name,spec", _gradient_cases())
@pytest.mark.parametrize(
    "objective",
    [
        ObjectiveKind.SUM_RATE,
        ObjectiveKind.BEAM_PATTERN_GAIN,
        ObjectiveKind.WEIGHTED_ISAC,
        ObjectiveKind.BEAMPATTERN_MSE,
    ],
)
def test_analytic_gradient_matches_finite_differences(name, spec, objective):
    channels = _channels(spec, 2, seed=10)
    geometry = GeometryContext.from_spec(spec)
    grid = np.radians(np.linspace(-60, 60, 13))
    mask = BeampatternMask.from_angles(geometry, grid, np.where(np.abs(grid) < 0.4, 1.0, 0.0))
    cfg = OptimizerConfig(objective=objective, weight=0.3, rate_ref=2.0, power_ref=0.7, mask=mask)
    problem = ParameterObjective(
        spec, BasebandProcessor.for_architecture(spec), build_feeds(spec), MatrixObjective(cfg, channels)
    )
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = problem.pack(ReconfigState.random(spec, rng))
        if spec.layers[0].constraint.is_amplitude:
            x = 0.05 + 0.9 * x
        report = check_gradient(problem, x, h_fd=1e-6)
        assert report.max_relative_error < 1e-4, name


def test_check_gradient_on_quadratic():
    rng = np.random.default_rng(12)
    M = rng.normal(size=(6, 6))
    A = M @ M.T
    b = rng.normal(size=6)

    def quadratic(x):
        return -0.5 * x @ A @ x + b @ x, -A @ x + b

    report = check_gradient(quadratic, rng.normal(size=6), h_fd=1e-4)
    assert report.max_relative_error < 1e-7
    assert report.analytic.shape == report.numeric.shape == (6,)


@pytest.mark.parametrize("h_fd", [0.0, -1e-6, 1e-2, float("nan")])
def test_check_gradient_rejects_bad_step(h_fd):
    def quadratic(x):
        return -0.5 * x @ x, -x

    with pytest.raises(ScenarioValidationError) as e:
        check_gradient(quadratic, np.ones(2), h_fd=h_fd)
    assert e.value.errors[0][0] == "h_fd"


def test_missing_targets_or_mask():
    spec = ArchitectureSpec.create_ris(4, FREQ)
    channels = _channels(spec, 1, seed=0, targets=())
    with pytest.raises(EmptyGrid):
        MatrixObjective(OptimizerConfig(objective=ObjectiveKind.BEAM_PATTERN_GAIN), channels)
    with pytest.raises(EmptyGrid):
        MatrixObjective(OptimizerConfig(objective=ObjectiveKind.BEAMPATTERN_MSE), channels)


def test_scaling_noise_and_power_keeps_the_optimum():
    results = []
    for scale in (1.0, 4.0):
        spec = ArchitectureSpec.create_ris(8, FREQ, power_budget=scale)
        channels = _channels(spec, 1, seed=13, noise_power=0.1 * scale)
        trace = gradient_ascent(
            spec,
            BasebandProcessor.for_architecture(spec),
            build_feeds(spec),
            ReconfigState.neutral(spec),
            channels,
            OptimizerConfig(max_iters=50),
        )
        results.append(trace.final_objective)
    assert results[1] == pytest.approx(results[0], abs=1e-9)


def test_water_filling():
    np.testing.assert_allclose(water_filling([2.0, 1.0], 2.0), [1.25, 0.75], atol=1e-9)
    np.testing.assert_allclose(water_filling([1.0, 0.1], 0.5), [0.5, 0.0], atol=1e-9)
    np.testing.assert_array_equal(water_filling([0.0, 0.0], 1.0), [0.0, 0.0])
    p = water_filling(np.random.default_rng(0).uniform(0.1, 3.0, 6), 4.0)
    assert np.sum(p) == pytest.approx(4.0, rel=1e-12)
    assert np.all(p >= 0.0)


def test_zero_forcing_precoders():
    rng = np.random.default_rng(14)
    H = rng.normal(size=(3, 5)) + 1j * rng.normal(size=(3, 5))
    W = zf_precoder(H, 2.0, 0.1)
    G = H @ W
    assert np.max(np.abs(G - np.diag(np.diag(G)))) < 1e-12
    assert np.sum(np.abs(W) ** 2) == pytest.approx(2.0, rel=1e-12)
    R = rzf_precoder(H, 2.0, 0.1)
    assert np.sum(np.abs(R) ** 2) == pytest.approx(2.0, rel=1e-12)


def test_precoder_step_beats_equal_power_zero_forcing():
    spec = ArchitectureSpec.create_dma(16, 4, FREQ, num_streams=2)
    channels = _channels(spec, 2, seed=15)
    feeds = build_feeds(spec)
    state = ReconfigState.random(spec, np.random.default_rng(15))
    cfg = OptimizerConfig()
    start = BasebandProcessor.equal_power(4, 2, spec.power_budget)
    V = precoder_step(spec, feeds, state, channels, cfg, start)
    rate = sum_rate(channels.H, build_effective_matrix(spec, V, feeds, state).matrix, 0.1)[0]

    H_eff = channels.H @ layer_product(feeds, state)
    W = np.linalg.pinv(H_eff)
    W = W / np.linalg.norm(W, axis=0) * np.sqrt(spec.power_budget / 2)
    baseline = sum_rate(H_eff, W, 0.1)[0]
    assert rate >= baseline - 1e-9


def test_alternating_rounds_are_nondecreasing():
    spec = ArchitectureSpec.create_rhs(16, 2, FREQ)
    channels = _channels(spec, 2, seed=16)
    trace = alternating_optimize(spec, channels, OptimizerConfig(max_iters=3, inner_iters=10))
    assert len(trace.objective_trace) >= 2
    assert np.all(np.diff(trace.objective_trace) >= 0.0)
    assert trace.baseband.power <= spec.power_budget * (1 + 1e-9)


def test_alternating_singular_channel():
    spec = ArchitectureSpec.create_dma(16, 4, FREQ, num_streams=2)
    channels = _channels(spec, 1, seed=17)
    twin = channels._replace(H=np.vstack([channels.H, channels.H]))
    with pytest.raises(SingularEffectiveChannel) as err:
        alternating_optimize(spec, twin, OptimizerConfig(regularized=False, max_iters=1))
    assert err.value.details()["condition_number"] > 1e12
    trace = alternating_optimize(spec, twin, OptimizerConfig(max_iters=1, inner_iters=2))
    assert np.isfinite(trace.final_objective)


def test_alternating_needs_digital_precoding():
    for spec in (ArchitectureSpec.create_ris(8, FREQ), ArchitectureSpec.create_sim(4, 2, 1, FREQ)):
        with pytest.raises(UnsupportedArchitecture):
            alternating_optimize(spec, _channels(spec, 1, seed=0), OptimizerConfig())


@pytest.mark.slow
def test_doubling_elements_adds_one_bit():
    rates = []
    for n in (64, 128):
        spec = _phase_only_waveguide(n)
        channels = _channels(spec, 1, seed=18, model=ChannelModel.LOS, noise_power=0.1)
        cfg = OptimizerConfig(max_iters=40, inner_iters=50, tolerance=1e-10)
        trace = alternating_optimize(spec, channels, cfg)
        rates.append(trace.final_objective)
        assert trace.final_objective == pytest.approx(np.log2(1 + n / 0.1), abs=0.1)
    assert rates[1] - rates[0] == pytest.approx(1.0, abs=0.15)


def test_optimizer_for_dispatches_on_precoding():
    ris = ArchitectureSpec.create_ris(4, FREQ)
    channels = _channels(ris, 1, seed=19)
    trace = optimizer_for(ris, channels, build_feeds(ris), ReconfigState.neutral(ris))(
        OptimizerConfig(max_iters=5)
    )
    assert trace.baseband.matrix.shape == (1, 1)
    dma = ArchitectureSpec.create_dma(8, 2, FREQ)
    channels = _channels(dma, 2, seed=19)
    trace = optimizer_for(dma, channels, build_feeds(dma), ReconfigState.neutral(dma))(
        OptimizerConfig(max_iters=1, inner_iters=2)
    )
    assert trace.iterations == 1


def test_pareto_end_points_are_references():
    spec = ArchitectureSpec.create_ris(8, FREQ)
    channels = _channels(spec, 1, seed=20, targets=(0.5,))
    cfg = OptimizerConfig(num_starts=2)
    points = pareto_sweep(spec, channels, [0.0, 0.5, 1.0], cfg)
    assert [p.weight for p in points] == [0.0, 0.5, 1.0]
    sense, _, comm = points
    assert comm.objective == pytest.approx(1.0)
    assert sense.objective == pytest.approx(1.0)
    assert comm.rate >= points[1].rate - 1e-6
    assert sense.worst_target_power >= points[1].worst_target_power - 1e-6


@pytest.mark.parametrize("weights", [[0.5, 0.2], [0.0, 1.2]])
def test_pareto_rejects_bad_weights(weights):
    spec = ArchitectureSpec.create_ris(4, FREQ)
    with pytest.raises(ScenarioValidationError):
        pareto_sweep(spec, _channels(spec, 1, seed=0), weights, OptimizerConfig())


@pytest.mark.slow
def test_pareto_rates_increase_with_weight_on_average():
    weights = [0.0, 0.25, 0.75, 1.0]
    rates = []
    for seed in range(20):
        spec = ArchitectureSpec.create_ris(8, FREQ)
        channels = _channels(spec, 1, seed=100 + seed, targets=(-0.6,))
        cfg = OptimizerConfig(max_iters=60, num_starts=2, seed=seed)
        rates.append([p.rate for p in pareto_sweep(spec, channels, weights, cfg)])
    mean = np.mean(rates, axis=0)
    assert np.all(np.diff(mean) >= -1e-9)


def _sim_rate(num_elements, num_layers, channels_seed, cfg):
    spec = ArchitectureSpec.create_sim(num_elements, num_layers, 2, FREQ)
    channels = _channels(spec, 2, seed=channels_seed, model=ChannelModel.RICIAN, targets=(0.2,))
    optimize = optimizer_for(spec, channels, build_feeds(spec), ReconfigState.neutral(spec))
    return optimize(cfg).final_objective


@pytest.mark.slow
def test_sim_rate_trends():
    seeds = range(20)
    by_size = {n: [] for n in (9, 16, 25, 36)}
    deep = []
    for seed in seeds:
        cfg = OptimizerConfig(max_iters=100, num_starts=2, seed=seed)
        for n in by_size:
            by_size[n].append(_sim_rate(n, 2, 200 + seed, cfg))
        deep.append(_sim_rate(25, 6, 200 + seed, cfg))
    means = [np.mean(by_size[n]) for n in sorted(by_size)]
    assert np.all(np.diff(means) >= 0.0)
    _, p_value = stats.ttest_rel(deep, by_size[25], alternative="greater")
    assert p_value < 0.05


@pytest.mark.slow
def test_sim_isac_keeps_most_of_the_rate():
    ratios, gains = [], []
    for seed in range(20):
        spec = ArchitectureSpec.create_sim(25, 2, 2, FREQ)
        channels = _channels(spec, 2, seed=300 + seed, model=ChannelModel.RICIAN, targets=(0.2,))
        cfg = OptimizerConfig(max_iters=100, num_starts=2, seed=seed)
        weighted, comm = pareto_sweep(spec, channels, [0.8, 1.0], cfg)
        ratios.append(weighted.rate / comm.rate)
        # ||E||_F^2 = P = 1 under END_TO_END, so the isotropic level is 1.
        gains.append(weighted.worst_target_power)
    assert np.mean(ratios) >= 0.7
    assert np.mean(gains) >= 5.0
