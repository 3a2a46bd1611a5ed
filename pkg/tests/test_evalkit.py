import numpy as np
import pandas as pd
import pytest

from pricelab.evalkit import (
    DeviationPrice,
    DeviationProtocol,
    detect_cycles,
    deviation_experiment,
    discounted_gain,
    equilibrium_gain_correlation,
    find_fixed_points,
    gain_table,
    impulse_response_stats,
    phase_portrait,
    summarize_profit_gains,
    uniform_pricing_gain,
)
from pricelab.evalkit.impulse_response import COLUMNS
from pricelab.evalkit.statistics import GAIN_TABLE_COLUMNS, bootstrap_share_interval, unprofitable_share
from pricelab.market import MarketParams, compute_benchmarks, profit, static_best_response
from pricelab.orchestrator import Verdict, convergence_verdict
from pricelab.strategies import ConstantStrategy, GrimTriggerStrategy, MapStrategy

DELTA = 0.95
HORIZON = 10


@pytest.fixture(scope="module")
def collusive_price(duopoly_benchmarks) -> float:
    return 0.5 * (duopoly_benchmarks.p_nash[0] + duopoly_benchmarks.p_mono[0])


@pytest.fixture(scope="module")
def grim_trigger(duopoly_benchmarks, collusive_price):
    gap = duopoly_benchmarks.p_mono[0] - duopoly_benchmarks.p_nash[0]
    return [
        GrimTriggerStrategy(collusive_price, duopoly_benchmarks.p_nash[0], radius=0.1 * gap)
        for _ in range(2)
    ]


def test_discounted_gain_arithmetic():
    assert discounted_gain([1.0, 1.0, 1.0], [0.0, 0.0, 0.0], 0.5) == pytest.approx(1.75)
    assert discounted_gain([0.2], [0.3], 0.95) == pytest.approx(-0.1)


def test_deviation_from_constant_nash_is_worthless(duopoly, duopoly_benchmarks):
    p_nash = duopoly_benchmarks.p_nash[0]
    strategies = [ConstantStrategy(p_nash), ConstantStrategy(p_nash)]
    result = deviation_experiment(
        duopoly, duopoly_benchmarks, strategies, 0, [p_nash, p_nash], DeviationProtocol()
    )
    assert result.discounted_gain == pytest.approx(0.0, abs=1e-6)
    assert not result.profitable


def test_deviation_from_blind_collusion_pays(duopoly, duopoly_benchmarks, collusive_price):
    strategies = [ConstantStrategy(collusive_price), ConstantStrategy(collusive_price)]
    result = deviation_experiment(
        duopoly,
        duopoly_benchmarks,
        strategies,
        0,
        [collusive_price, collusive_price],
        DeviationProtocol(),
    )
    response = static_best_response(
        duopoly, [collusive_price], 0, duopoly_benchmarks.bounds
    )
    # rivals never react: only the deviation period differs
    expected = (
        profit(duopoly, [response, collusive_price])[0]
        - profit(duopoly, [collusive_price, collusive_price])[0]
    )
    assert result.discounted_gain == pytest.approx(expected, rel=1e-9)
    assert result.discounted_gain > 0
    assert result.profitable
    assert result.deviation_path[1, 0] == pytest.approx(response)
    np.testing.assert_allclose(result.deviation_path[2:], result.baseline_path[2:])


def test_deviation_from_grim_trigger_is_punished(
    duopoly, duopoly_benchmarks, collusive_price
):
    p_nash = duopoly_benchmarks.p_nash[0]
    strategies = [GrimTriggerStrategy(collusive_price, p_nash) for _ in range(2)]
    result = deviation_experiment(
        duopoly,
        duopoly_benchmarks,
        strategies,
        0,
        [collusive_price, collusive_price],
        DeviationProtocol(delta=DELTA, horizon=HORIZON),
    )
    response = static_best_response(
        duopoly, [collusive_price], 0, duopoly_benchmarks.bounds
    )
    collusive_profit = profit(duopoly, [collusive_price, collusive_price])[0]
    deviation_profit = profit(duopoly, [response, collusive_price])[0]
    nash_profit = profit(duopoly, [p_nash, p_nash])[0]
    expected = deviation_profit - collusive_profit + sum(
        DELTA**t * (nash_profit - collusive_profit) for t in range(1, HORIZON)
    )
    assert result.discounted_gain == pytest.approx(expected, rel=1e-9)
    assert result.discounted_gain < 0
    assert not result.profitable
    np.testing.assert_allclose(result.deviation_path[2:], p_nash)
    np.testing.assert_allclose(result.baseline_path, collusive_price)
    assert result.relative_gain < 0
    assert result.differential_gain < 0


def test_deviation_result_shapes(duopoly, duopoly_benchmarks, grim_trigger, collusive_price):
    protocol = DeviationProtocol(horizon=5, settle=7)
    result = deviation_experiment(
        duopoly, duopoly_benchmarks, grim_trigger, 1, [collusive_price] * 2, protocol
    )
    assert result.settle_path.shape == (7, 2)
    assert result.deviation_path.shape == (7, 2)
    assert result.deviation_profits.shape == (5, 2)
    np.testing.assert_allclose(result.pre_deviation_prices, collusive_price)


@pytest.mark.parametrize(
    "deviation, expected",
    [
        (DeviationPrice.MONOPOLY, "p_mono"),
        (DeviationPrice.NASH, "p_nash"),
    ],
)
def test_alternative_deviation_prices(
    duopoly, duopoly_benchmarks, collusive_price, deviation, expected
):
    strategies = [ConstantStrategy(collusive_price), ConstantStrategy(collusive_price)]
    result = deviation_experiment(
        duopoly,
        duopoly_benchmarks,
        strategies,
        0,
        [collusive_price] * 2,
        DeviationProtocol(deviation=deviation),
    )
    assert result.deviation_path[1, 0] == pytest.approx(getattr(duopoly_benchmarks, expected)[0])


def test_explicit_and_cost_deviation_prices(duopoly, duopoly_benchmarks, collusive_price):
    strategies = [ConstantStrategy(collusive_price), ConstantStrategy(collusive_price)]
    explicit = deviation_experiment(
        duopoly,
        duopoly_benchmarks,
        strategies,
        1,
        [collusive_price] * 2,
        DeviationProtocol(deviation=DeviationPrice.VALUE, value=1.9249),
    )
    assert explicit.deviation_path[1, 1] == pytest.approx(1.9249)
    at_cost = deviation_experiment(
        duopoly,
        duopoly_benchmarks,
        strategies,
        0,
        [collusive_price] * 2,
        DeviationProtocol(deviation=DeviationPrice.COST),
    )
    assert at_cost.deviation_profits[0, 0] == pytest.approx(0.0)
    assert not at_cost.profitable


@pytest.mark.parametrize(
    "kwargs",
    [
        {"delta": 0.0},
        {"delta": 1.5},
        {"horizon": 0},
        {"settle": -1},
        {"deviation": DeviationPrice.VALUE},
        {"value": 1.8},
    ],
)
def test_invalid_protocols(kwargs):
    with pytest.raises(ValueError):
        DeviationProtocol(**kwargs)


def test_deviation_rejects_wrong_strategy_count(duopoly, duopoly_benchmarks):
    with pytest.raises(ValueError):
        deviation_experiment(
            duopoly, duopoly_benchmarks, [ConstantStrategy(1.5)], 0, [1.5, 1.5]
        )


def test_convergence_verdicts(duopoly, duopoly_benchmarks, collusive_price, grim_trigger):
    p_nash = duopoly_benchmarks.p_nash[0]
    verdict, results = convergence_verdict(
        duopoly, duopoly_benchmarks, [ConstantStrategy(p_nash)] * 2, [p_nash] * 2
    )
    assert verdict is Verdict.NASH_CONVERGENT
    assert [r.deviator for r in results] == [0, 1]

    verdict, _ = convergence_verdict(
        duopoly, duopoly_benchmarks, [ConstantStrategy(collusive_price)] * 2, [collusive_price] * 2
    )
    assert verdict is Verdict.NON_CONVERGENT

    verdict, _ = convergence_verdict(
        duopoly, duopoly_benchmarks, grim_trigger, [collusive_price] * 2
    )
    assert verdict is Verdict.NASH_CONVERGENT


def test_three_firm_deviation_averages_compliant_firms():
    params = MarketParams.symmetric(n=3)
    benchmarks = compute_benchmarks(params)
    p_nash = benchmarks.p_nash[0]
    strategies = [GrimTriggerStrategy(1.65, p_nash) for _ in range(3)]
    _, results = convergence_verdict(params, benchmarks, strategies, [1.65] * 3)
    stats = impulse_response_stats(results)
    compliant = stats[(stats["role"] == "compliant") & (stats["step"] == 1)]
    assert compliant["mean_price"].iloc[0] == pytest.approx(p_nash)
    assert compliant["count"].iloc[0] == 3


def test_impulse_response_stats(duopoly, duopoly_benchmarks, grim_trigger, collusive_price):
    _, results = convergence_verdict(
        duopoly, duopoly_benchmarks, grim_trigger, [collusive_price] * 2
    )
    stats = impulse_response_stats(results)
    assert list(stats.columns) == COLUMNS
    assert len(stats) == 2 * (HORIZON + 2)
    assert sorted(set(stats["step"])) == list(range(-1, HORIZON + 1))
    before = stats[stats["step"] == -1]
    np.testing.assert_allclose(before["mean"], 0.0)
    deviator = stats[(stats["role"] == "deviator") & (stats["step"] == 0)]
    assert deviator["mean"].iloc[0] < 0
    punished = stats[(stats["role"] == "compliant") & (stats["step"] == 1)]
    assert punished["mean_price"].iloc[0] == pytest.approx(duopoly_benchmarks.p_nash[0])
    assert (stats["p5"] <= stats["p95"]).all()


def test_impulse_response_stats_without_results():
    stats = impulse_response_stats([])
    assert stats.empty
    assert list(stats.columns) == COLUMNS


def test_grim_trigger_phase_portrait_has_two_fixed_points(
    duopoly_benchmarks, grim_trigger, collusive_price
):
    portrait = phase_portrait(grim_trigger, duopoly_benchmarks.bounds, benchmarks=duopoly_benchmarks)
    assert len(portrait.trajectories) == 900
    points = sorted(portrait.fixed_points, key=lambda p: float(p.prices[0]))
    assert len(points) == 2
    np.testing.assert_allclose(points[0].prices, duopoly_benchmarks.p_nash, atol=1e-4)
    assert points[0].classification == "near_nash"
    np.testing.assert_allclose(points[1].prices, collusive_price, atol=1e-4)
    assert points[1].classification == "supra_competitive"
    assert sum(p.basin_share for p in points) == pytest.approx(1.0)
    assert points[1].basin_share < points[0].basin_share


def test_phase_portrait_of_constant_strategies(duopoly_benchmarks):
    strategies = [ConstantStrategy(1.6), ConstantStrategy(1.8)]
    portrait = phase_portrait(
        strategies, duopoly_benchmarks.bounds, grid_resolution=10, benchmarks=duopoly_benchmarks
    )
    assert len(portrait.trajectories) == 100
    assert len(portrait.fixed_points) == 1
    assert portrait.fixed_points[0].basin_share == 1.0
    assert all(portrait.converged)
    assert all(len(m) == len(t) - 1 for m, t in zip(portrait.magnitudes, portrait.trajectories))
    content = portrait.to_dict()
    assert len(content["grid_axis"]) == 10
    assert "magnitudes" in content["trajectories"][0]


def test_phase_portrait_stays_in_the_price_box(duopoly_benchmarks, grim_trigger):
    low, high = duopoly_benchmarks.bounds
    portrait = phase_portrait(grim_trigger, duopoly_benchmarks.bounds, grid_resolution=8)
    for trajectory in portrait.trajectories:
        assert np.all((trajectory >= low - 1e-12) & (trajectory <= high + 1e-12))


def test_phase_portrait_needs_starts_beyond_two_firms(duopoly_benchmarks):
    strategies = [ConstantStrategy(1.6)] * 3
    with pytest.raises(ValueError):
        phase_portrait(strategies, duopoly_benchmarks.bounds)
    portrait = phase_portrait(
        strategies, duopoly_benchmarks.bounds, starts=np.full((4, 3), 1.7)
    )
    assert portrait.grid_axis is None
    assert len(portrait.trajectories) == 4


def test_alternating_map_is_a_two_cycle(duopoly_benchmarks):
    low, high = duopoly_benchmarks.bounds
    middle = 0.5 * (low + high)

    def alternate(last: np.ndarray) -> float:
        return high if last[0] < middle else low

    portrait = phase_portrait(
        [MapStrategy(alternate), MapStrategy(alternate)],
        duopoly_benchmarks.bounds,
        grid_resolution=4,
        max_iterations=50,
    )
    assert not any(portrait.converged)
    assert set(portrait.cycles) == {2}


def test_detect_cycles():
    three_cycle = np.tile([[1.5], [1.6], [1.7]], (10, 1))
    assert detect_cycles(three_cycle) == 3
    fixed = np.full((30, 2), 1.5)
    assert detect_cycles(fixed) is None
    assert detect_cycles(np.array([[1.5], [1.6]])) is None
    aperiodic = np.random.default_rng(0).uniform(1.4, 2.0, size=(40, 2))
    assert detect_cycles(aperiodic) is None


def test_find_fixed_points_ignores_unconverged_trajectories(duopoly_benchmarks):
    portrait = phase_portrait(
        [ConstantStrategy(1.6), ConstantStrategy(1.6)], duopoly_benchmarks.bounds, grid_resolution=3
    )
    portrait.magnitudes[0] = np.array([1.0])
    points = find_fixed_points(portrait, duopoly_benchmarks)
    assert points[0].basin_share == pytest.approx(8 / 9)


def test_gain_table(rng):
    gains = {
        10_000: [0.1, -0.2, 0.3, -0.05, 0.0, 0.2],
        50_000: [-0.1, -0.2, -0.3, 0.01],
    }
    table = gain_table(gains, rng, resamples=2_000)
    assert list(table.columns) == GAIN_TABLE_COLUMNS
    assert table["checkpoint"].tolist() == [10_000, 50_000]
    assert table["unprofitable_share"].tolist() == pytest.approx([0.5, 0.75])
    assert (table["p25"] <= table["p50"]).all() and (table["p50"] <= table["p75"]).all()
    assert (table["ci_lower"] <= table["unprofitable_share"]).all()
    assert (table["unprofitable_share"] <= table["ci_upper"]).all()


def test_gain_table_needs_two_gains(rng):
    with pytest.raises(ValueError):
        gain_table({10_000: [0.1]}, rng)


def test_bootstrap_interval_of_a_constant_sample(rng):
    assert bootstrap_share_interval([-1.0] * 10, rng, resamples=100) == (1.0, 1.0)
    assert unprofitable_share([1e-10, 1.0]) == 0.5


def test_equilibrium_gain_correlation():
    assert equilibrium_gain_correlation(
        [True, False, True, False], [0.1, 0.5, 0.1, 0.5]
    ) == pytest.approx(-1.0)
    assert equilibrium_gain_correlation([True, True, True], [0.1, 0.2, 0.3]) is None
    with pytest.raises(ValueError):
        equilibrium_gain_correlation([True, False], [0.1, 0.2])


def test_summarize_profit_gains():
    summary = summarize_profit_gains([0.2, 0.4, 0.6, 0.8])
    assert summary["count"] == 4
    assert summary["mean"] == pytest.approx(0.5)
    assert summary["share_above_half"] == pytest.approx(0.5)
    assert summarize_profit_gains([]) == {"count": 0}


def test_uniform_pricing_gain(duopoly, duopoly_benchmarks, rng):
    gain = uniform_pricing_gain(duopoly, duopoly_benchmarks, 10_000, rng)
    assert np.isfinite(gain)
    assert -1.0 < gain < 1.0


def test_gain_table_frame_type(rng):
    assert isinstance(gain_table({1: [0.0, 1.0]}, rng, resamples=10), pd.DataFrame)


def test_equilibrium_gain_correlation_recovers_a_planted_value(rng):
    convergent = rng.random(20_000) < 0.5
    standardized = (convergent - convergent.mean()) / convergent.std()
    gains = 0.2 * standardized + np.sqrt(1 - 0.2**2) * rng.standard_normal(20_000)
    assert equilibrium_gain_correlation(convergent.tolist(), gains) == pytest.approx(
        0.2, abs=0.03
    )


def test_phase_portrait_of_a_contraction_to_nash(duopoly_benchmarks):
    p_nash = duopoly_benchmarks.p_nash[0]
    strategies = [
        MapStrategy(lambda prices: p_nash + 0.2 * (prices[1] - p_nash)),
        MapStrategy(lambda prices: p_nash + 0.2 * (prices[0] - p_nash)),
    ]
    portrait = phase_portrait(
        strategies, duopoly_benchmarks.bounds, grid_resolution=10, benchmarks=duopoly_benchmarks
    )
    assert all(portrait.converged)
    assert len(portrait.fixed_points) == 1
    point = portrait.fixed_points[0]
    assert point.classification == "near_nash"
    assert point.basin_share == pytest.approx(1.0)
    np.testing.assert_allclose(point.prices, p_nash, atol=1e-4)
