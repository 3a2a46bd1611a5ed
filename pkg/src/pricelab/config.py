"""
Flat key-value run configuration.

One `key = value` per line, `#` starts a comment. Keys are the attribute
names of MarketParams, AgentHyperParams and SessionSettings; vector keys
accept comma-separated values, and a single value is broadcast to all firms.
"""

import hashlib
import logging
import typing
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Type

import attr
import rxn.utilities.attrs
import textdistance
from rxn.utilities.files import load_list_from_file

from .agent import AgentHyperParams
from .market import MarketConfigurationError, MarketParams

logger = logging.getLogger(__name__)
logger.addHandler(logging.NullHandler())

DEFAULT_CHECKPOINT_STEPS = (10_000, 20_000, 30_000, 40_000, 50_000)
BROADCAST_KEYS = ("a", "c")
# conventional abbreviations, expanded before ranking key suggestions
KEY_ALIASES = {
    "lr": "lambda",
    "learning_rate": "lambda",
    "alpha": "temperature",
    "cost": "c",
    "costs": "c",
    "quality": "a",
}


class ConfigError(ValueError):
    """Base class for configuration errors."""


class UnknownConfigKeyError(ConfigError):
    """Exception raised for a key that no configuration section knows."""

    def __init__(self, key: str, closest: str):
        self.key = key
        self.closest = closest
        super().__init__(f'Unknown configuration key "{key}"; did you mean "{closest}"?')


class InvalidConfigValueError(ConfigError):
    """Exception raised for a value that cannot be parsed or violates an invariant."""

    def __init__(self, key: str, value: str, reason: str):
        self.key = key
        self.value = value
        super().__init__(f'Invalid value "{value}" for "{key}": {reason}')


@attr.s(auto_attribs=True, frozen=True)
class SessionSettings:
    """
    Length and bookkeeping of a training session.

    Attributes:
        steps: number of periods T.
        checkpoint_steps: steps after which a checkpoint is written.
        metrics_window: window of the profit-gain moving average.
        diagnostics_every: cadence of the agent diagnostics, in steps.
        persist_replay: whether checkpoints also store the replay buffers.
    """

    steps: int = 50_000
    checkpoint_steps: Tuple[int, ...] = DEFAULT_CHECKPOINT_STEPS
    metrics_window: int = 1_000
    diagnostics_every: int = 100
    persist_replay: bool = False

    def __attrs_post_init__(self) -> None:
        if self.steps < 1 or self.metrics_window < 1 or self.diagnostics_every < 1:
            raise ValueError("steps, metrics_window and diagnostics_every must be positive")
        if any(s < 1 or s > self.steps for s in self.checkpoint_steps):
            raise ValueError(
                f"checkpoint steps must lie in [1, {self.steps}] "
                f"(actual: {self.checkpoint_steps})"
            )
        if list(self.checkpoint_steps) != sorted(set(self.checkpoint_steps)):
            raise ValueError("checkpoint steps must be strictly increasing")


@attr.s(auto_attribs=True, frozen=True)
class RunConfig:
    market: MarketParams = attr.Factory(MarketParams)
    hyper: AgentHyperParams = attr.Factory(AgentHyperParams)
    session: SessionSettings = attr.Factory(SessionSettings)

    def __attrs_post_init__(self) -> None:
        if self.session.steps < self.hyper.batch_size:
            raise InvalidConfigValueError(
                "steps",
                str(self.session.steps),
                f"must be at least the batch size {self.hyper.batch_size}",
            )

    def to_dict(self) -> Dict[str, Any]:
        values: Dict[str, Any] = {}
        for section in (self.market, self.hyper, self.session):
            values.update(attr.asdict(section))
        return values

    def to_text(self) -> str:
        """Canonical rendering: sorted keys, one per line."""
        return "".join(
            f"{key} = {_render(value)}\n" for key, value in sorted(self.to_dict().items())
        )

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


SECTIONS: Tuple[Type[Any], ...] = (MarketParams, AgentHyperParams, SessionSettings)


def valid_keys() -> List[str]:
    return [key for cls in SECTIONS for key in rxn.utilities.attrs.get_variables(cls)]


def _expand_aliases(key: str) -> str:
    if key in KEY_ALIASES:
        return KEY_ALIASES[key]
    return "_".join(KEY_ALIASES.get(token, token) for token in key.split("_"))


def closest_key(key: str) -> str:
    """Valid key with the highest normalized Levenshtein similarity."""
    expanded = _expand_aliases(key.strip().lower())
    return max(
        valid_keys(),
        key=lambda candidate: textdistance.levenshtein.normalized_similarity(
            expanded, candidate
        ),
    )


def _render(value: Any) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(_render(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_lines(lines: Iterable[str]) -> Dict[str, str]:
    """Raw key -> value strings; later occurrences override earlier ones."""
    values: Dict[str, str] = {}
    for number, line in enumerate(lines, 1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigError(f'Line {number}: expected "key = value", got "{line.strip()}"')
        key, value = (part.strip() for part in content.split("=", 1))
        values[key] = value
    return values


def _parse_scalar(key: str, value: str, value_type: Any) -> Any:
    try:
        if value_type is bool:
            lowered = value.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError("expected a boolean")
            return lowered in ("true", "1", "yes")
        if value_type is int:
            return int(value)
        return float(value)
    except ValueError as e:
        raise InvalidConfigValueError(key, value, str(e)) from e


def _parse_value(key: str, value: str, value_type: Any) -> Any:
    if typing.get_origin(value_type) is tuple:
        element_type = typing.get_args(value_type)[0]
        return tuple(
            _parse_scalar(key, part.strip(), element_type)
            for part in value.split(",")
            if part.strip()
        )
    return _parse_scalar(key, value, value_type)


def _section_kwargs(cls: Type[Any], values: Dict[str, str]) -> Dict[str, Any]:
    return {
        name: _parse_value(name, values[name], value_type)
        for name, value_type in rxn.utilities.attrs.get_variables_and_types(cls)
        if name in values
    }


def build_config(values: Dict[str, str]) -> RunConfig:
    """
    Creates the run configuration from raw key -> value strings.

    Raises:
        UnknownConfigKeyError: for keys that no section knows.
        InvalidConfigValueError: for unparsable values or violated invariants.
    """
    known = set(valid_keys())
    for key in values:
        if key not in known:
            raise UnknownConfigKeyError(key, closest_key(key))

    market_kwargs = _section_kwargs(MarketParams, values)
    n = market_kwargs.get("n", MarketParams().n)
    for key in BROADCAST_KEYS:
        default = getattr(MarketParams(), key)
        vector = market_kwargs.get(key, default[:1])
        if len(vector) == 1:
            market_kwargs[key] = vector * n

    try:
        market = MarketParams(**market_kwargs)
    except MarketConfigurationError as e:
        raise InvalidConfigValueError("market", str(market_kwargs), str(e)) from e
    try:
        hyper = AgentHyperParams(**_section_kwargs(AgentHyperParams, values))
    except ValueError as e:
        raise InvalidConfigValueError("agent", str(values), str(e)) from e

    session_kwargs = _section_kwargs(SessionSettings, values)
    if "steps" in session_kwargs and "checkpoint_steps" not in session_kwargs:
        # keep the default cadence as far as it fits into the session
        steps = session_kwargs["steps"]
        session_kwargs["checkpoint_steps"] = tuple(
            s for s in DEFAULT_CHECKPOINT_STEPS if s < steps
        ) + (steps,)
    try:
        session = SessionSettings(**session_kwargs)
    except ValueError as e:
        raise InvalidConfigValueError("session", str(session_kwargs), str(e)) from e

    return RunConfig(market=market, hyper=hyper, session=session)


def load_config(
    path: Optional[Path] = None, overrides: Sequence[str] = ()
) -> RunConfig:
    """
    Reads a configuration file and applies `key=value` overrides on top.

    Args:
        path: configuration file; defaults only if None.
        overrides: additional assignments, applied after the file.
    """
    values: Dict[str, str] = {}
    if path is not None:
        values.update(parse_lines(load_list_from_file(path)))
    values.update(parse_lines(overrides))
    config = build_config(values)
    logger.debug(f"Configuration hash: {config.config_hash}")
    return config


def config_from_text(text: str) -> RunConfig:
    return build_config(parse_lines(text.splitlines()))
