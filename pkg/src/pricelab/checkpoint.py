"""
Versioned binary checkpoints.

Layout: the magic bytes, the format version (major, minor) as two
little-endian uint16, the length of a UTF-8 JSON header as little-endian
uint32, the header, then little-endian float64 blocks in the order the
header lists them. The header is serialized with sorted keys, so that
identical sessions produce identical files.
"""

import json
import logging
import re
import struct
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import attr
import numpy as np

from .agent import AgentState
from .config import RunConfig, config_from_text
from .market import Benchmarks
from .netcore import AdamState, LayerParams, MlpParams
from .replay import ExperienceBatch, ReplayBuffer

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

MAGIC = b"PRICELAB"
FORMAT_VERSION = (1, 0)
CHECKPOINT_PATTERN = re.compile(r"^checkpoint_(\d+)\.ckpt$")
NETWORK_NAMES = ("actor", "critic1", "critic2", "target1", "target2")
OPTIMIZER_NAMES = (
    "actor_optimizer",
    "critic1_optimizer",
    "critic2_optimizer",
    "temperature_optimizer",
)


class CheckpointFormatError(ValueError):
    """Exception raised for unreadable, incompatible or mismatching checkpoints."""


class MissingCheckpointError(FileNotFoundError):
    """Exception raised when a requested checkpoint step does not exist."""

    def __init__(self, step: int, available: List[int]):
        self.step = step
        self.available = available
        super().__init__(
            f"No checkpoint for step {step}; available steps: "
            f"{', '.join(str(s) for s in available) or 'none'}"
        )


@attr.s(auto_attribs=True)
class Checkpoint:
    """
    Everything needed to continue or evaluate a session after `step` periods.

    Attributes:
        step: number of completed periods.
        seed: session seed.
        config: run configuration.
        benchmarks: static benchmarks of the market.
        agents: learned state of every agent.
        rng_states: bit generator states, environment stream first.
        memory: the last k joint price vectors, oldest first.
        recent_prices: up to 50 last realized joint prices, oldest first.
        replay: replay buffers, only if the session persists them.
    """

    step: int
    seed: int
    config: RunConfig
    benchmarks: Benchmarks
    agents: List[AgentState]
    rng_states: List[Dict[str, Any]]
    memory: List[np.ndarray]
    recent_prices: np.ndarray
    replay: Optional[List[ReplayBuffer]] = None

    @property
    def config_hash(self) -> str:
        return self.config.config_hash

    @property
    def settle_prices(self) -> np.ndarray:
        """Mean of the recent realized prices, starting point of evaluations."""
        mean: np.ndarray = self.recent_prices.mean(axis=0)
        return mean


def checkpoint_path(directory: Path, step: int) -> Path:
    return directory / f"checkpoint_{step}.ckpt"


def available_steps(directory: Path) -> List[int]:
    if not directory.is_dir():
        return []
    steps = []
    for path in directory.iterdir():
        match = CHECKPOINT_PATTERN.match(path.name)
        if match is not None:
            steps.append(int(match.group(1)))
    return sorted(steps)


def _to_json_safe(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return {"__ndarray__": value.tolist(), "dtype": str(value.dtype)}
    if isinstance(value, dict):
        return {key: _to_json_safe(v) for key, v in value.items()}
    if isinstance(value, np.integer):
        return int(value)
    return value


def _from_json_safe(value: Any) -> Any:
    if isinstance(value, dict):
        if "__ndarray__" in value:
            return np.array(value["__ndarray__"], dtype=value["dtype"])
        return {key: _from_json_safe(v) for key, v in value.items()}
    return value


def _network_blocks(prefix: str, params: MlpParams) -> Iterator[Tuple[str, np.ndarray]]:
    for index, layer in enumerate(params.layers):
        yield f"{prefix}/layer{index}/weights", layer.weights
        yield f"{prefix}/layer{index}/biases", layer.biases


def _optimizer_blocks(prefix: str, state: AdamState) -> Iterator[Tuple[str, np.ndarray]]:
    for index, (m, v) in enumerate(zip(state.first_moments, state.second_moments)):
        yield f"{prefix}/{index}/first", m
        yield f"{prefix}/{index}/second", v


def _collect_blocks(checkpoint: Checkpoint) -> List[Tuple[str, np.ndarray]]:
    blocks: List[Tuple[str, np.ndarray]] = []
    for number, agent in enumerate(checkpoint.agents):
        for name in NETWORK_NAMES:
            blocks.extend(_network_blocks(f"agent{number}/{name}", getattr(agent, name)))
        for name in OPTIMIZER_NAMES:
            blocks.extend(
                _optimizer_blocks(f"agent{number}/{name}", getattr(agent, name))
            )
    blocks.append(("memory", np.stack(checkpoint.memory)))
    blocks.append(("recent_prices", checkpoint.recent_prices))
    for number, buffer in enumerate(checkpoint.replay or []):
        stored = buffer.stored_batch()
        blocks.append((f"replay{number}/states", stored.states))
        blocks.append((f"replay{number}/actions", stored.actions))
        blocks.append((f"replay{number}/rewards", stored.rewards))
        blocks.append((f"replay{number}/next_states", stored.next_states))
    return blocks


def _agent_header(agent: AgentState) -> Dict[str, Any]:
    return {
        "log_temperature": agent.log_temperature,
        "avg_reward": agent.avg_reward,
        "leaky_slope": agent.actor.leaky_slope,
        "layer_counts": {name: len(getattr(agent, name).layers) for name in NETWORK_NAMES},
        "optimizers": {
            name: {
                "step": getattr(agent, name).step,
                "beta1": getattr(agent, name).beta1,
                "beta2": getattr(agent, name).beta2,
                "epsilon": getattr(agent, name).epsilon,
                "size": len(getattr(agent, name).first_moments),
            }
            for name in OPTIMIZER_NAMES
        },
    }


def checkpoint_to_bytes(checkpoint: Checkpoint) -> bytes:
    blocks = _collect_blocks(checkpoint)
    header = {
        "schema_version": "{}.{}".format(*FORMAT_VERSION),
        "step": checkpoint.step,
        "seed": checkpoint.seed,
        "config": checkpoint.config.to_text(),
        "config_hash": checkpoint.config_hash,
        "benchmarks": attr.asdict(checkpoint.benchmarks),
        "rng_states": [_to_json_safe(state) for state in checkpoint.rng_states],
        "agents": [_agent_header(agent) for agent in checkpoint.agents],
        "replay": None
        if checkpoint.replay is None
        else [
            {"cursor": buffer.cursor, "capacity": buffer.capacity}
            for buffer in checkpoint.replay
        ],
        "blocks": [{"name": name, "shape": list(array.shape)} for name, array in blocks],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<HHI", FORMAT_VERSION[0], FORMAT_VERSION[1], len(header_bytes)),
        header_bytes,
    ]
    parts.extend(np.ascontiguousarray(array, dtype="<f8").tobytes() for _, array in blocks)
    return b"".join(parts)


def save_checkpoint(checkpoint: Checkpoint, directory: Path) -> Path:
    directory.mkdir(parents=True, exist_ok=True)
    path = checkpoint_path(directory, checkpoint.step)
    path.write_bytes(checkpoint_to_bytes(checkpoint))
    logger.info(f'Saved checkpoint for step {checkpoint.step} to "{path}"')
    return path


def _read_network(blocks: Dict[str, np.ndarray], prefix: str, layers: int, slope: float) -> MlpParams:
    return MlpParams(
        layers=[
            LayerParams(
                blocks[f"{prefix}/layer{index}/weights"],
                blocks[f"{prefix}/layer{index}/biases"],
            )
            for index in range(layers)
        ],
        leaky_slope=slope,
    )


def _read_optimizer(blocks: Dict[str, np.ndarray], prefix: str, info: Dict[str, Any]) -> AdamState:
    return AdamState(
        first_moments=[blocks[f"{prefix}/{i}/first"] for i in range(info["size"])],
        second_moments=[blocks[f"{prefix}/{i}/second"] for i in range(info["size"])],
        step=info["step"],
        beta1=info["beta1"],
        beta2=info["beta2"],
        epsilon=info["epsilon"],
    )


def checkpoint_from_bytes(data: bytes, expected_hash: Optional[str] = None) -> Checkpoint:
    """
    Raises:
        CheckpointFormatError: for bad magic bytes, an unknown major version,
            truncated content or a configuration hash mismatch.
    """
    prefix_size = len(MAGIC) + struct.calcsize("<HHI")
    if len(data) < prefix_size or not data.startswith(MAGIC):
        raise CheckpointFormatError("not a pricelab checkpoint (bad magic bytes)")
    major, minor, header_size = struct.unpack_from("<HHI", data, len(MAGIC))
    if major != FORMAT_VERSION[0]:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {major}.{minor} "
            f"(supported: {FORMAT_VERSION[0]}.x)"
        )
    header = json.loads(data[prefix_size : prefix_size + header_size].decode("utf-8"))

    offset = prefix_size + header_size
    blocks: Dict[str, np.ndarray] = {}
    for block in header["blocks"]:
        shape = tuple(block["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        if offset + 8 * count > len(data):
            raise CheckpointFormatError(f'truncated checkpoint in block "{block["name"]}"')
        blocks[block["name"]] = (
            np.frombuffer(data, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += 8 * count
    if offset != len(data):
        raise CheckpointFormatError("trailing bytes after the last block")

    config = config_from_text(header["config"])
    if config.config_hash != header["config_hash"]:
        raise CheckpointFormatError("stored configuration does not match its hash")
    if expected_hash is not None and expected_hash != header["config_hash"]:
        raise CheckpointFormatError(
            f"configuration hash mismatch: expected {expected_hash}, "
            f"found {header['config_hash']}"
        )

    agents = []
    for number, info in enumerate(header["agents"]):
        networks = {
            name: _read_network(
                blocks, f"agent{number}/{name}", info["layer_counts"][name], info["leaky_slope"]
            )
            for name in NETWORK_NAMES
        }
        optimizers = {
            name: _read_optimizer(blocks, f"agent{number}/{name}", info["optimizers"][name])
            for name in OPTIMIZER_NAMES
        }
        agents.append(
            AgentState(
                log_temperature=info["log_temperature"],
                avg_reward=info["avg_reward"],
                **networks,
                **optimizers,
            )
        )

    replay = None
    if header["replay"] is not None:
        replay = []
        state_size = config.market.n * config.market.k
        for number, info in enumerate(header["replay"]):
            buffer = ReplayBuffer(info["capacity"], state_size)
            buffer.restore(
                ExperienceBatch(
                    states=blocks[f"replay{number}/states"].reshape(-1, state_size),
                    actions=blocks[f"replay{number}/actions"],
                    rewards=blocks[f"replay{number}/rewards"],
                    next_states=blocks[f"replay{number}/next_states"].reshape(-1, state_size),
                ),
                cursor=info["cursor"],
            )
            replay.append(buffer)

    benchmarks = header["benchmarks"]
    return Checkpoint(
        step=header["step"],
        seed=header["seed"],
        config=config,
        benchmarks=Benchmarks(
            p_nash=tuple(benchmarks["p_nash"]),
            p_mono=tuple(benchmarks["p_mono"]),
            pi_nash=tuple(benchmarks["pi_nash"]),
            pi_mono=tuple(benchmarks["pi_mono"]),
            p_low=benchmarks["p_low"],
            p_high=benchmarks["p_high"],
        ),
        agents=agents,
        rng_states=[_from_json_safe(state) for state in header["rng_states"]],
        memory=list(blocks["memory"]),
        recent_prices=blocks["recent_prices"],
        replay=replay,
    )


def load_checkpoint(
    directory: Path, step: Optional[int] = None, expected_hash: Optional[str] = None
) -> Checkpoint:
    """
    Loads the checkpoint of a session directory.

    Args:
        directory: session directory holding checkpoint_<step>.ckpt files.
        step: step to load; the latest one if None.
        expected_hash: configuration hash the checkpoint must carry.

    Raises:
        MissingCheckpointError: if the step is not available.
        CheckpointFormatError: for incompatible files.
    """
    steps = available_steps(directory)
    if step is None:
        if not steps:
            raise MissingCheckpointError(-1, steps)
        step = steps[-1]
    if step not in steps:
        raise MissingCheckpointError(step, steps)
    return checkpoint_from_bytes(
        checkpoint_path(directory, step).read_bytes(), expected_hash=expected_hash
    )
