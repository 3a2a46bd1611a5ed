"""
Average-reward soft actor-critic.

The actor maps a state to the mean and log standard deviation of a Gaussian
whose samples are squashed by tanh into raw actions in (-1, 1). Two critics
estimate the differential soft action-value; their lagged copies (targets)
supply the temporal-difference targets and the average-reward estimate.
"""

import logging
from typing import Optional, Tuple

import attr
import numpy as np

from .netcore import (
    AdamState,
    DivergenceError,
    ForwardCache,
    MlpParams,
    OutputInit,
    adam_step,
    adam_update,
    copy_mlp,
    init_mlp,
    max_abs_difference,
    mlp_backward,
    mlp_forward,
    polyak_average,
)
from .replay import ExperienceBatch, ReplayBuffer

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

SQUASH_EPSILON = 1e-6
# tanh saturates to exactly 1.0 in double precision for large inputs
RAW_ACTION_LIMIT = 1.0 - 1e-9
HALF_LOG_TWO_PI = 0.5 * np.log(2.0 * np.pi)

LogStdBounds = Tuple[float, float]


@attr.s(auto_attribs=True, frozen=True)
class AgentHyperParams:
    """
    Hyperparameters of the agent, named after the configuration keys.

    Attributes:
        target_entropy: entropy level the temperature steers towards.
        hidden_critic: width of the critic hidden layers.
        hidden_actor: width of the actor hidden layers.
        layers_critic: number of hidden layers of the critics.
        layers_actor: number of hidden layers of the actor.
        leaky_slope: negative slope of the leaky ReLU activations.
        batch_size: number of experiences per update.
        buffer_size: capacity of the replay buffer.
        tau: weight of the online critics in the target update.
        lambda_actor: Adam step size of the actor.
        lambda_critic: Adam step size of the critics.
        lambda_temperature: Adam step size of the log temperature.
        lambda_reward: step size of the average-reward estimate.
        log_std_min: lower clamp of the log standard deviation.
        log_std_max: upper clamp of the log standard deviation.
        initial_temperature: temperature before the first update.
    """

    target_entropy: float = -1.0
    hidden_critic: int = 256
    hidden_actor: int = 1024
    layers_critic: int = 2
    layers_actor: int = 2
    leaky_slope: float = 0.01
    batch_size: int = 128
    buffer_size: int = 100_000
    tau: float = 0.001
    lambda_actor: float = 0.03
    lambda_critic: float = 0.003
    lambda_temperature: float = 0.003
    lambda_reward: float = 0.01
    log_std_min: float = -5.0
    log_std_max: float = 2.0
    initial_temperature: float = 1.0

    def __attrs_post_init__(self) -> None:
        positive = {
            "hidden_critic": self.hidden_critic,
            "hidden_actor": self.hidden_actor,
            "batch_size": self.batch_size,
            "buffer_size": self.buffer_size,
            "tau": self.tau,
            "lambda_actor": self.lambda_actor,
            "lambda_critic": self.lambda_critic,
            "lambda_temperature": self.lambda_temperature,
            "lambda_reward": self.lambda_reward,
            "initial_temperature": self.initial_temperature,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive (actual: {value})")
        if self.layers_critic != 2 or self.layers_actor != 2:
            raise ValueError(
                f"actor and critics have exactly two hidden layers "
                f"(actual: {self.layers_actor}, {self.layers_critic})"
            )
        if not self.log_std_min < self.log_std_max:
            raise ValueError(
                f"log_std_min must be below log_std_max "
                f"(actual: {self.log_std_min}, {self.log_std_max})"
            )
        if self.tau > 1 or self.lambda_reward > 1:
            raise ValueError("tau and lambda_reward must not exceed 1")

    @property
    def log_std_bounds(self) -> LogStdBounds:
        return self.log_std_min, self.log_std_max


@attr.s(auto_attribs=True)
class AgentState:
    """
    Learned quantities of one agent.

    Attributes:
        actor: policy network, outputs (mean, log std).
        critic1: first online critic.
        critic2: second online critic.
        target1: lagged copy of critic1.
        target2: lagged copy of critic2.
        log_temperature: log of the entropy temperature alpha.
        avg_reward: running average-reward estimate.
    """

    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    target1: MlpParams
    target2: MlpParams
    log_temperature: float
    avg_reward: float
    actor_optimizer: AdamState
    critic1_optimizer: AdamState
    critic2_optimizer: AdamState
    temperature_optimizer: AdamState

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature))


@attr.s(auto_attribs=True, frozen=True)
class PolicySample:
    """Squashed-Gaussian samples; all fields share the batch shape."""

    raw_action: np.ndarray
    log_prob: np.ndarray
    pre_squash: np.ndarray
    mean: np.ndarray
    log_std: np.ndarray
    noise: np.ndarray


@attr.s(auto_attribs=True, frozen=True)
class TdTargets:
    values: np.ndarray
    next_actions: np.ndarray
    next_log_probs: np.ndarray
    next_values: np.ndarray


@attr.s(auto_attribs=True, frozen=True)
class LearnDiagnostics:
    actor_loss: float = float("nan")
    critic_loss: float = float("nan")
    temperature: float = float("nan")
    avg_reward: float = float("nan")
    entropy: float = float("nan")
    target_lag: float = float("nan")
    warming_up: bool = False


def create_agent_state(
    state_size: int, hyper: AgentHyperParams, rng: np.random.Generator
) -> AgentState:
    """
    Initializes actor, critics and targets.

    The actor output layer is small-uniform with a log-std bias of 1.0; the
    critic output layer is orthogonal with gain 0.01 and an optimistic bias
    of 10.0.
    """
    actor = init_mlp(
        (state_size, hyper.hidden_actor, hyper.hidden_actor, 2),
        rng,
        OutputInit(kind="uniform", gain=0.1, biases=(0.0, 1.0)),
        leaky_slope=hyper.leaky_slope,
    )
    critic_shape = (state_size + 1, hyper.hidden_critic, hyper.hidden_critic, 1)
    critic_init = OutputInit(kind="orthogonal", gain=0.01, biases=(10.0,))
    critic1 = init_mlp(critic_shape, rng, critic_init, leaky_slope=hyper.leaky_slope)
    critic2 = init_mlp(critic_shape, rng, critic_init, leaky_slope=hyper.leaky_slope)
    log_temperature = float(np.log(hyper.initial_temperature))
    return AgentState(
        actor=actor,
        critic1=critic1,
        critic2=critic2,
        target1=copy_mlp(critic1),
        target2=copy_mlp(critic2),
        log_temperature=log_temperature,
        avg_reward=0.0,
        actor_optimizer=AdamState.for_mlp(actor),
        critic1_optimizer=AdamState.for_mlp(critic1),
        critic2_optimizer=AdamState.for_mlp(critic2),
        temperature_optimizer=AdamState.for_arrays([np.zeros(1)]),
    )


def _policy_outputs(
    actor: MlpParams, states: np.ndarray, log_std_bounds: LogStdBounds
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, ForwardCache]:
    outputs, cache = mlp_forward(actor, states)
    if not np.all(np.isfinite(outputs)):
        raise DivergenceError("non-finite actor output")
    mean = outputs[:, 0]
    raw_log_std = outputs[:, 1]
    log_std = np.clip(raw_log_std, *log_std_bounds)
    return mean, log_std, raw_log_std, cache


def policy_forward(
    actor: MlpParams, states: np.ndarray, log_std_bounds: LogStdBounds
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and clamped log standard deviation for a batch of states.

    Raises:
        DivergenceError: for non-finite network outputs.
    """
    mean, log_std, _, _ = _policy_outputs(actor, states, log_std_bounds)
    return mean, log_std


def squash(pre_squash: np.ndarray) -> np.ndarray:
    squashed: np.ndarray = np.clip(np.tanh(pre_squash), -RAW_ACTION_LIMIT, RAW_ACTION_LIMIT)
    return squashed


def squashed_log_prob(
    noise: np.ndarray, log_std: np.ndarray, raw_action: np.ndarray
) -> np.ndarray:
    """
    Log-density of a squashed-Gaussian sample, given the standardized noise
    that produced it. The affine map onto prices is a constant and omitted.
    """
    gaussian = -0.5 * noise**2 - log_std - HALF_LOG_TWO_PI
    log_prob: np.ndarray = gaussian - np.log(1.0 - raw_action**2 + SQUASH_EPSILON)
    return log_prob


def sample_squashed(
    mean: np.ndarray,
    log_std: np.ndarray,
    rng: np.random.Generator,
    noise: Optional[np.ndarray] = None,
) -> PolicySample:
    """
    Reparameterized sample x = tanh(mean + exp(log_std) * noise).

    Args:
        mean: Gaussian means.
        log_std: Gaussian log standard deviations, already clamped.
        rng: random generator for the noise.
        noise: standard normal draws to use instead of fresh ones.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    log_std = np.atleast_1d(np.asarray(log_std, dtype=np.float64))
    if noise is None:
        noise = rng.standard_normal(mean.shape)
    pre_squash = mean + np.exp(log_std) * noise
    raw_action = squash(pre_squash)
    return PolicySample(
        raw_action=raw_action,
        log_prob=squashed_log_prob(noise, log_std, raw_action),
        pre_squash=pre_squash,
        mean=mean,
        log_std=log_std,
        noise=noise,
    )


def mean_action(
    actor: MlpParams, state: np.ndarray, log_std_bounds: LogStdBounds
) -> float:
    """Deterministic action tanh(mean), i.e. play with exploration disabled."""
    mean, _ = policy_forward(actor, state, log_std_bounds)
    return float(squash(mean)[0])


def _critic_inputs(states: np.ndarray, actions: np.ndarray) -> np.ndarray:
    return np.column_stack([np.atleast_2d(states), np.atleast_1d(actions)])


def critic_value(
    critic1: MlpParams, critic2: MlpParams, states: np.ndarray, actions: np.ndarray
) -> np.ndarray:
    """Mean of the two critic estimates, one value per (state, action) row."""
    inputs = _critic_inputs(states, actions)
    q1, _ = mlp_forward(critic1, inputs)
    q2, _ = mlp_forward(critic2, inputs)
    values: np.ndarray = 0.5 * (q1[:, 0] + q2[:, 0])
    return values


def td_target(
    batch: ExperienceBatch,
    target1: MlpParams,
    target2: MlpParams,
    actor: MlpParams,
    temperature: float,
    avg_reward: float,
    rng: np.random.Generator,
    log_std_bounds: LogStdBounds,
) -> TdTargets:
    """
    Differential soft TD targets r - avg_reward - alpha log sigma(a'|s') + q_target(s', a'),
    with a' freshly sampled from the current actor.
    """
    mean, log_std = policy_forward(actor, batch.next_states, log_std_bounds)
    sample = sample_squashed(mean, log_std, rng)
    next_values = critic_value(target1, target2, batch.next_states, sample.raw_action)
    values = (
        batch.rewards - avg_reward - temperature * sample.log_prob + next_values
    )
    return TdTargets(
        values=values,
        next_actions=sample.raw_action,
        next_log_probs=sample.log_prob,
        next_values=next_values,
    )


def avg_reward_update(
    avg_reward: float,
    reward: float,
    next_value: float,
    current_value: float,
    rate: float,
) -> float:
    """Running average reward corrected by the TD error of the target critics."""
    return (1.0 - rate) * avg_reward + rate * (reward + next_value - current_value)


def target_update(target: MlpParams, critic: MlpParams, tau: float) -> MlpParams:
    """u <- (1 - tau) u + tau w; tau weights the online parameters."""
    return polyak_average(target, critic, tau)


def temperature_update(
    log_temperature: float,
    optimizer: AdamState,
    log_probs: np.ndarray,
    target_entropy: float,
    step_size: float,
) -> Tuple[float, AdamState]:
    """
    Adam step on log alpha for the objective log alpha * (H - target), with H
    the mean of -log sigma: alpha rises while the entropy is below target.
    """
    entropy = float(np.mean(-log_probs))
    gradient = np.array([entropy - target_entropy])
    (updated,), optimizer = adam_update(
        optimizer, [np.array([log_temperature])], [gradient], step_size, "temperature"
    )
    return float(updated[0]), optimizer


def critic_loss_and_gradient(
    critic: MlpParams, states: np.ndarray, actions: np.ndarray, targets: np.ndarray
) -> Tuple[float, MlpParams]:
    """Mean squared error against fixed targets and its parameter gradient."""
    outputs, cache = mlp_forward(critic, _critic_inputs(states, actions))
    errors = outputs[:, 0] - targets
    loss = float(np.mean(errors**2))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite critic loss")
    gradients, _ = mlp_backward(
        critic, cache, (2.0 / len(targets) * errors)[:, np.newaxis]
    )
    return loss, gradients


def actor_loss_and_gradient(
    actor: MlpParams,
    critic1: MlpParams,
    critic2: MlpParams,
    states: np.ndarray,
    noise: np.ndarray,
    temperature: float,
    log_std_bounds: LogStdBounds,
) -> Tuple[float, MlpParams, np.ndarray]:
    """
    Reparameterized actor objective mean(alpha log sigma - q) with the noise
    held fixed, and its gradient with respect to the actor parameters only.

    Returns:
        Tuple: (loss, actor gradient, log-probabilities of the samples).
    """
    mean, log_std, raw_log_std, actor_cache = _policy_outputs(
        actor, states, log_std_bounds
    )
    std = np.exp(log_std)
    pre_squash = mean + std * noise
    tanh = np.tanh(pre_squash)
    raw_action = squash(pre_squash)
    log_prob = squashed_log_prob(noise, log_std, raw_action)

    inputs = _critic_inputs(states, raw_action)
    q1, cache1 = mlp_forward(critic1, inputs)
    q2, cache2 = mlp_forward(critic2, inputs)
    q = 0.5 * (q1[:, 0] + q2[:, 0])
    loss = float(np.mean(temperature * log_prob - q))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite actor loss")

    batch = len(noise)
    unit = np.full((batch, 1), 0.5)
    _, input_gradient1 = mlp_backward(critic1, cache1, unit)
    _, input_gradient2 = mlp_backward(critic2, cache2, unit)
    dq_dx = input_gradient1[:, -1] + input_gradient2[:, -1]

    dx_du = 1.0 - tanh**2
    dlogp_dx = 2.0 * raw_action / (1.0 - raw_action**2 + SQUASH_EPSILON)
    dloss_du = (temperature * dlogp_dx - dq_dx) * dx_du / batch
    dloss_dmean = dloss_du
    dloss_dlog_std = dloss_du * std * noise - temperature / batch
    # the clamp blocks gradients outside of the admissible log-std range
    inside = (raw_log_std >= log_std_bounds[0]) & (raw_log_std <= log_std_bounds[1])
    dloss_dlog_std = np.where(inside, dloss_dlog_std, 0.0)

    gradients, _ = mlp_backward(
        actor, actor_cache, np.column_stack([dloss_dmean, dloss_dlog_std])
    )
    return loss, gradients, log_prob


class SoftActorCritic:
    """
    One pricing agent: its networks, hyperparameters and random stream.
    """

    def __init__(
        self,
        state_size: int,
        hyper: AgentHyperParams,
        rng: np.random.Generator,
        state: Optional[AgentState] = None,
    ):
        """
        Args:
            state_size: size of the flattened observation (n * k).
            hyper: hyperparameters.
            rng: random stream of the agent, used for initialization,
                exploration and batch sampling.
            state: learned state to start from, freshly initialized if None.
        """
        self.state_size = state_size
        self.hyper = hyper
        self.rng = rng
        self.state = (
            state if state is not None else create_agent_state(state_size, hyper, rng)
        )

    @property
    def temperature(self) -> float:
        return self.state.temperature

    def policy(self, states: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return policy_forward(self.state.actor, states, self.hyper.log_std_bounds)

    def sample_action(self, observation: np.ndarray) -> Tuple[float, float]:
        """Samples a raw action for one observation; returns (action, log-prob)."""
        mean, log_std = self.policy(observation)
        sample = sample_squashed(mean, log_std, self.rng)
        return float(sample.raw_action[0]), float(sample.log_prob[0])

    def mean_action(self, observation: np.ndarray) -> float:
        return mean_action(self.state.actor, observation, self.hyper.log_std_bounds)

    def critic_value(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return critic_value(self.state.critic1, self.state.critic2, states, actions)

    def td_target(self, batch: ExperienceBatch) -> TdTargets:
        return td_target(
            batch,
            self.state.target1,
            self.state.target2,
            self.state.actor,
            self.temperature,
            self.state.avg_reward,
            self.rng,
            self.hyper.log_std_bounds,
        )

    def fresh_log_probs(self, states: np.ndarray, noise: np.ndarray) -> np.ndarray:
        mean, log_std = self.policy(states)
        return sample_squashed(mean, log_std, self.rng, noise=noise).log_prob

    def temperature_update(self, log_probs: np.ndarray) -> float:
        self.state.log_temperature, self.state.temperature_optimizer = temperature_update(
            self.state.log_temperature,
            self.state.temperature_optimizer,
            log_probs,
            self.hyper.target_entropy,
            self.hyper.lambda_temperature,
        )
        return self.temperature

    def actor_update(
        self, batch: ExperienceBatch, noise: Optional[np.ndarray] = None
    ) -> float:
        """One Adam step on the actor; the critics are held fixed."""
        if noise is None:
            noise = self.rng.standard_normal(len(batch))
        loss, gradients, _ = actor_loss_and_gradient(
            self.state.actor,
            self.state.critic1,
            self.state.critic2,
            batch.states,
            noise,
            self.temperature,
            self.hyper.log_std_bounds,
        )
        self.state.actor, self.state.actor_optimizer = adam_step(
            self.state.actor_optimizer,
            self.state.actor,
            gradients,
            self.hyper.lambda_actor,
            "actor",
        )
        return loss

    def critic_update(self, batch: ExperienceBatch) -> float:
        """
        One Adam step on both critics towards the shared TD targets, followed
        by the average-reward update on the batch means.

        Returns:
            The mean of the two critics' mean squared errors.
        """
        targets = self.td_target(batch)
        current_values = critic_value(
            self.state.target1, self.state.target2, batch.states, batch.actions
        )

        loss1, gradients1 = critic_loss_and_gradient(
            self.state.critic1, batch.states, batch.actions, targets.values
        )
        loss2, gradients2 = critic_loss_and_gradient(
            self.state.critic2, batch.states, batch.actions, targets.values
        )
        self.state.critic1, self.state.critic1_optimizer = adam_step(
            self.state.critic1_optimizer,
            self.state.critic1,
            gradients1,
            self.hyper.lambda_critic,
            "critic 1",
        )
        self.state.critic2, self.state.critic2_optimizer = adam_step(
            self.state.critic2_optimizer,
            self.state.critic2,
            gradients2,
            self.hyper.lambda_critic,
            "critic 2",
        )

        self.state.avg_reward = avg_reward_update(
            self.state.avg_reward,
            float(np.mean(batch.rewards)),
            float(np.mean(targets.next_values)),
            float(np.mean(current_values)),
            self.hyper.lambda_reward,
        )
        if not np.isfinite(self.state.avg_reward):
            raise DivergenceError("non-finite average-reward estimate")
        return 0.5 * (loss1 + loss2)

    def target_update(self) -> None:
        self.state.target1 = target_update(
            self.state.target1, self.state.critic1, self.hyper.tau
        )
        self.state.target2 = target_update(
            self.state.target2, self.state.critic2, self.hyper.tau
        )

    def learn_step(self, buffer: ReplayBuffer) -> LearnDiagnostics:
        """
        Temperature, actor, critic (with average reward) and target updates,
        in this order, on one batch sampled from the buffer.
        """
        if len(buffer) < self.hyper.batch_size:
            return LearnDiagnostics(
                temperature=self.temperature,
                avg_reward=self.state.avg_reward,
                warming_up=True,
            )

        batch = buffer.sample_uniform(self.hyper.batch_size, self.rng)
        noise = self.rng.standard_normal(len(batch))
        log_probs = self.fresh_log_probs(batch.states, noise)
        self.temperature_update(log_probs)
        actor_loss = self.actor_update(batch, noise)
        critic_loss = self.critic_update(batch)
        self.target_update()

        return LearnDiagnostics(
            actor_loss=actor_loss,
            critic_loss=critic_loss,
            temperature=self.temperature,
            avg_reward=self.state.avg_reward,
            entropy=float(np.mean(-log_probs)),
            target_lag=max(
                max_abs_difference(self.state.target1, self.state.critic1),
                max_abs_difference(self.state.target2, self.state.critic2),
            ),
        )
