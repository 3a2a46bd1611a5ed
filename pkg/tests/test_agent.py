import numpy as np
import pytest
from scipy.integrate import trapezoid
from scipy.stats import norm

from pricelab.agent import (
    RAW_ACTION_LIMIT,
    AgentHyperParams,
    SoftActorCritic,
    actor_loss_and_gradient,
    avg_reward_update,
    create_agent_state,
    critic_loss_and_gradient,
    critic_value,
    mean_action,
    policy_forward,
    sample_squashed,
    squashed_log_prob,
    target_update,
    td_target,
    temperature_update,
)
from pricelab.market import MarketEnvironment, MarketParams, compute_benchmarks, scale_action
from pricelab.netcore import AdamState, MlpParams, copy_mlp, max_abs_difference
from pricelab.orchestrator import make_rng
from pricelab.replay import Experience, ExperienceBatch, ReplayBuffer

GRADIENT_CASES = 50


def _flat(params: MlpParams) -> np.ndarray:
    return np.concatenate([a.ravel() for a in params.arrays()])


def _numeric_gradient(params: MlpParams, loss, h: float = 1e-6) -> np.ndarray:
    numeric = []
    for array in params.arrays():
        for index in np.ndindex(array.shape):
            original = array[index]
            array[index] = original + h
            up = loss(params)
            array[index] = original - h
            down = loss(params)
            array[index] = original
            numeric.append((up - down) / (2 * h))
    return np.array(numeric)


def _relative_error(numeric: np.ndarray, analytic: np.ndarray) -> float:
    return float(np.linalg.norm(numeric - analytic) / max(np.linalg.norm(analytic), 1e-12))


def _random_batch(rng: np.random.Generator, size: int = 8, state_size: int = 2) -> ExperienceBatch:
    return ExperienceBatch(
        states=rng.uniform(-1, 1, size=(size, state_size)),
        actions=rng.uniform(-0.9, 0.9, size=size),
        rewards=rng.uniform(0.2, 0.35, size=size),
        next_states=rng.uniform(-1, 1, size=(size, state_size)),
    )


def test_hyper_parameter_defaults():
    hyper = AgentHyperParams()
    assert hyper.hidden_actor == 1024
    assert hyper.hidden_critic == 256
    assert hyper.batch_size == 128
    assert hyper.tau == 0.001
    assert hyper.log_std_bounds == (-5.0, 2.0)


@pytest.mark.parametrize(
    "overrides",
    [
        {"batch_size": 0},
        {"tau": 0.0},
        {"tau": 1.5},
        {"layers_actor": 3},
        {"log_std_min": 2.0, "log_std_max": -5.0},
        {"lambda_reward": 2.0},
    ],
)
def test_invalid_hyper_parameters(overrides):
    with pytest.raises(ValueError):
        AgentHyperParams(**overrides)


def test_initial_agent_state(tiny_hyper, rng):
    state = create_agent_state(2, tiny_hyper, rng)
    assert state.actor.shape == (2, 8, 8, 2)
    assert state.critic1.shape == (3, 8, 8, 1)
    assert state.temperature == pytest.approx(1.0)
    assert state.avg_reward == 0.0
    assert max_abs_difference(state.target1, state.critic1) == 0.0
    assert max_abs_difference(state.critic1, state.critic2) > 0.0

    states = rng.uniform(-1, 1, size=(10, 2))
    values = critic_value(state.critic1, state.critic2, states, rng.uniform(-1, 1, size=10))
    np.testing.assert_allclose(values, 10.0, atol=0.1)
    _, log_std = policy_forward(state.actor, states, tiny_hyper.log_std_bounds)
    np.testing.assert_allclose(log_std, 1.0, atol=0.2)


def test_log_std_is_clamped(tiny_hyper, rng):
    state = create_agent_state(2, tiny_hyper, rng)
    state.actor.layers[-1].biases[1] = 50.0
    _, log_std = policy_forward(state.actor, np.zeros((3, 2)), tiny_hyper.log_std_bounds)
    np.testing.assert_allclose(log_std, 2.0)


def test_squashed_log_prob_matches_change_of_variables(rng):
    mean = rng.normal(size=20)
    log_std = rng.uniform(-1, 0.5, size=20)
    sample = sample_squashed(mean, log_std, rng)
    expected = norm.logpdf(sample.pre_squash, loc=mean, scale=np.exp(log_std)) - np.log(
        1 - np.tanh(sample.pre_squash) ** 2 + 1e-6
    )
    np.testing.assert_allclose(sample.log_prob, expected, rtol=1e-9, atol=1e-9)


def test_squashed_density_integrates_to_one():
    x = np.linspace(-1 + 1e-7, 1 - 1e-7, 400_001)
    mean, log_std = 0.3, np.log(0.5)
    noise = (np.arctanh(x) - mean) / np.exp(log_std)
    density = np.exp(squashed_log_prob(noise, np.full_like(x, log_std), x))
    assert trapezoid(density, x) == pytest.approx(1.0, abs=1e-3)


def test_sampled_actions_stay_inside_the_open_interval(rng):
    sample = sample_squashed(np.array([50.0, -50.0, 0.0]), np.array([2.0, 2.0, 2.0]), rng)
    assert np.all(np.abs(sample.raw_action) <= RAW_ACTION_LIMIT)
    assert np.all(np.isfinite(sample.log_prob))


def test_sample_with_given_noise_is_deterministic(rng):
    noise = np.array([0.5, -1.0])
    first = sample_squashed(np.zeros(2), np.zeros(2), rng, noise=noise)
    second = sample_squashed(np.zeros(2), np.zeros(2), rng, noise=noise)
    np.testing.assert_array_equal(first.raw_action, second.raw_action)
    np.testing.assert_allclose(first.raw_action, np.tanh(noise))


def test_mean_action_is_tanh_of_the_mean(tiny_hyper, rng):
    state = create_agent_state(2, tiny_hyper, rng)
    observation = np.array([0.2, -0.4])
    mean, _ = policy_forward(state.actor, observation, tiny_hyper.log_std_bounds)
    assert mean_action(state.actor, observation, tiny_hyper.log_std_bounds) == pytest.approx(
        np.tanh(mean[0])
    )


@pytest.mark.parametrize("case", range(GRADIENT_CASES))
def test_actor_gradient_matches_finite_differences(case, tiny_hyper):
    rng = make_rng(case, 7)
    state = create_agent_state(2, tiny_hyper, rng)
    # moderate spreads keep the samples away from tanh saturation
    state.actor.layers[-1].biases[1] = rng.uniform(-1.0, 0.0)
    states = rng.uniform(-1, 1, size=(8, 2))
    noise = rng.standard_normal(8)
    temperature = float(rng.uniform(0.1, 2.0))
    bounds = tiny_hyper.log_std_bounds

    _, gradients, _ = actor_loss_and_gradient(
        state.actor, state.critic1, state.critic2, states, noise, temperature, bounds
    )

    def loss(actor: MlpParams) -> float:
        return actor_loss_and_gradient(
            actor, state.critic1, state.critic2, states, noise, temperature, bounds
        )[0]

    numeric = _numeric_gradient(state.actor, loss)
    assert _relative_error(numeric, _flat(gradients)) <= 1e-4


def test_actor_gradient_is_blocked_by_the_log_std_clamp(tiny_hyper, rng):
    state = create_agent_state(2, tiny_hyper, rng)
    state.actor.layers[-1].biases[1] = 10.0
    _, gradients, _ = actor_loss_and_gradient(
        state.actor,
        state.critic1,
        state.critic2,
        rng.uniform(-1, 1, size=(8, 2)),
        rng.standard_normal(8),
        1.0,
        tiny_hyper.log_std_bounds,
    )
    assert gradients.layers[-1].biases[1] == 0.0
    np.testing.assert_array_equal(gradients.layers[-1].weights[1], 0.0)
    assert gradients.layers[-1].biases[0] != 0.0


@pytest.mark.parametrize("case", range(GRADIENT_CASES))
def test_critic_gradient_matches_finite_differences(case, tiny_hyper):
    rng = make_rng(case, 8)
    state = create_agent_state(2, tiny_hyper, rng)
    batch = _random_batch(rng)
    targets = rng.uniform(9.0, 11.0, size=len(batch))

    _, gradients = critic_loss_and_gradient(state.critic1, batch.states, batch.actions, targets)

    def loss(critic: MlpParams) -> float:
        return critic_loss_and_gradient(critic, batch.states, batch.actions, targets)[0]

    numeric = _numeric_gradient(state.critic1, loss)
    assert _relative_error(numeric, _flat(gradients)) <= 1e-4


@pytest.mark.parametrize(
    "log_prob, direction",
    [(-2.0, -1.0), (3.0, 1.0)],
)
def test_temperature_follows_the_entropy_gap(log_prob, direction):
    # objective log(alpha) * (H - target) has the derivative H - target
    log_temperature, optimizer = temperature_update(
        0.0, AdamState.for_arrays([np.zeros(1)]), np.full(16, log_prob), -1.0, 0.003
    )
    assert np.sign(log_temperature) == direction
    assert abs(log_temperature) == pytest.approx(0.003, rel=1e-4)
    assert optimizer.step == 1


def test_td_target_composition(tiny_hyper, rng):
    state = create_agent_state(2, tiny_hyper, rng)
    batch = _random_batch(rng)
    targets = td_target(
        batch, state.target1, state.target2, state.actor, 0.5, 0.2, rng, tiny_hyper.log_std_bounds
    )
    next_values = critic_value(state.target1, state.target2, batch.next_states, targets.next_actions)
    np.testing.assert_allclose(targets.next_values, next_values)
    np.testing.assert_allclose(
        targets.values, batch.rewards - 0.2 - 0.5 * targets.next_log_probs + next_values
    )


def test_average_reward_estimate_on_a_two_state_cycle():
    # states alternate deterministically with rewards 1 and 3; differential
    # values -0.5 and 0.5 solve v(s) = r(s) - 2 + v(s')
    rewards = {0: 1.0, 1: 3.0}
    values = {0: -0.5, 1: 0.5}
    estimate = 0.0
    state = 0
    for _ in range(2000):
        following = 1 - state
        estimate = avg_reward_update(
            estimate, rewards[state], values[following], values[state], 0.01
        )
        state = following
    assert estimate == pytest.approx(2.0, abs=1e-3)


def test_target_update_weights_the_online_critic(tiny_hyper, rng):
    state = create_agent_state(2, tiny_hyper, rng)
    critic = copy_mlp(state.critic1)
    for array in critic.arrays():
        array += 1.0
    updated = target_update(state.target1, critic, 0.001)
    assert max_abs_difference(updated, state.target1) == pytest.approx(0.001)


def _filled_buffer(rng: np.random.Generator, size: int) -> ReplayBuffer:
    buffer = ReplayBuffer(200, 2)
    for _ in range(size):
        buffer.push(
            Experience(
                state=rng.uniform(-1, 1, size=2),
                action=float(rng.uniform(-0.9, 0.9)),
                reward=float(rng.uniform(0.2, 0.35)),
                next_state=rng.uniform(-1, 1, size=2),
            )
        )
    return buffer


def test_learn_step_waits_for_a_full_batch(tiny_hyper, rng):
    agent = SoftActorCritic(2, tiny_hyper, make_rng(0, 1))
    actor = copy_mlp(agent.state.actor)
    diagnostics = agent.learn_step(_filled_buffer(rng, tiny_hyper.batch_size - 1))
    assert diagnostics.warming_up
    assert np.isnan(diagnostics.actor_loss)
    assert max_abs_difference(actor, agent.state.actor) == 0.0


def test_learn_step_updates_all_components(tiny_hyper, rng):
    agent = SoftActorCritic(2, tiny_hyper, make_rng(0, 1))
    before = create_agent_state(2, tiny_hyper, make_rng(0, 1))
    diagnostics = agent.learn_step(_filled_buffer(rng, 50))
    assert not diagnostics.warming_up
    assert np.isfinite(diagnostics.actor_loss) and np.isfinite(diagnostics.critic_loss)
    assert max_abs_difference(before.actor, agent.state.actor) > 0.0
    assert max_abs_difference(before.critic1, agent.state.critic1) > 0.0
    target_shift = max_abs_difference(before.target1, agent.state.target1)
    critic_shift = max_abs_difference(before.critic1, agent.state.critic1)
    assert target_shift == pytest.approx(tiny_hyper.tau * critic_shift, rel=1e-6)
    assert agent.state.avg_reward != 0.0
    assert agent.state.log_temperature != 0.0
    assert agent.state.actor_optimizer.step == 1


def test_learn_step_is_deterministic(tiny_hyper):
    buffer = _filled_buffer(make_rng(3, 0), 60)
    first = SoftActorCritic(2, tiny_hyper, make_rng(4, 1))
    second = SoftActorCritic(2, tiny_hyper, make_rng(4, 1))
    for _ in range(5):
        first.learn_step(buffer)
        second.learn_step(buffer)
    assert max_abs_difference(first.state.actor, second.state.actor) == 0.0
    assert first.state.avg_reward == second.state.avg_reward


def _entropy_control_run(seed: int, steps: int = 20_000) -> float:
    params = MarketParams.symmetric(n=2)
    benchmarks = compute_benchmarks(params)
    hyper = AgentHyperParams(hidden_actor=64, hidden_critic=64)
    agent = SoftActorCritic(2, hyper, make_rng(seed, 1))
    env_rng = make_rng(seed, 0)
    env = MarketEnvironment(params, benchmarks)
    rival = benchmarks.p_nash[1]
    env.reset([rival, rival])
    buffer = ReplayBuffer(hyper.buffer_size, 2)
    entropies = []
    for step in range(steps):
        observation = env.observation()
        if step < hyper.batch_size:
            raw = float(np.clip(env_rng.uniform(-1, 1), -RAW_ACTION_LIMIT, RAW_ACTION_LIMIT))
        else:
            raw, log_prob = agent.sample_action(observation)
            entropies.append(-log_prob)
        profits = env.step([scale_action(raw, benchmarks.bounds), rival])
        buffer.push(Experience(observation, raw, float(profits[0]), env.observation()))
        agent.learn_step(buffer)
    return float(np.mean(entropies[-5_000:]))


@pytest.mark.slow
def test_entropy_is_steered_to_the_target():
    within = [abs(_entropy_control_run(seed) + 1.0) <= 0.3 for seed in range(10)]
    assert sum(within) >= 8


def test_entropy_estimate_matches_the_squashed_density(rng):
    mean, log_std = 0.3, np.log(0.5)
    sample = sample_squashed(np.full(200_000, mean), np.full(200_000, log_std), rng)
    monte_carlo = float(np.mean(-sample.log_prob))

    x = np.linspace(-1 + 1e-7, 1 - 1e-7, 400_001)
    noise = (np.arctanh(x) - mean) / np.exp(log_std)
    log_density = squashed_log_prob(noise, np.full_like(x, log_std), x)
    integrated = trapezoid(-np.exp(log_density) * log_density, x)
    assert monte_carlo == pytest.approx(integrated, abs=0.01)


def test_targets_lag_the_online_critics(tiny_hyper, rng):
    agent = SoftActorCritic(2, tiny_hyper, make_rng(5, 1))
    buffer = _filled_buffer(rng, 100)
    initial_target = copy_mlp(agent.state.target1)
    initial_critic = copy_mlp(agent.state.critic1)
    lags = []
    critic_shifts = []
    for _ in range(1_000):
        lags.append(agent.learn_step(buffer).target_lag)
        critic_shifts.append(max_abs_difference(initial_critic, agent.state.critic1))

    assert all(lag > 0.0 for lag in lags)
    assert lags[-1] == pytest.approx(
        max(
            max_abs_difference(agent.state.target1, agent.state.critic1),
            max_abs_difference(agent.state.target2, agent.state.critic2),
        )
    )
    target_shift = max_abs_difference(initial_target, agent.state.target1)
    # the target is a Polyak average: it covers at most 1 - (1 - tau)^1000 of
    # the largest critic excursion
    reach = 1.0 - (1.0 - tiny_hyper.tau) ** 1_000
    assert 0.0 < target_shift <= reach * max(critic_shifts) + 1e-12
