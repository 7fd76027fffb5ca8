"""
Adversary policies: the network scheduler of a simulated run.

A policy sees a ``PolicyView`` of the network (leak views only, never a
confidential payload) and returns one ``Action`` per step. Policies are
looked up by name; new ones register with ``@register_policy("name")``.
"""

from __future__ import annotations

import logging
import random
from abc import ABC, abstractmethod
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any, ClassVar, TypeVar, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from fairex.chain import CHAIN_ID
from fairex.errors import UnknownPolicy
from fairex.wire import Channel, MessageTag, TAG_NAMES

logger = logging.getLogger(__name__)

# Identity under which injected messages are sent
ADVERSARY_ID = "adversary"


@dataclass(frozen=True)
class LeakView:
    """
    What the adversary learns about one in-flight message.

    ``payload`` is None on confidential channels; only the tag and the
    total length leak there.
    """

    msg_id: int
    sender: str
    receiver: str
    channel: Channel
    tag: MessageTag | None
    length: int
    payload: bytes | None

    @property
    def tag_name(self) -> str:
        return TAG_NAMES[self.tag] if self.tag is not None else "Unknown"


@dataclass(frozen=True)
class PolicyView:
    """Read-only snapshot handed to a policy each step."""

    step: int
    pending: tuple[LeakView, ...]
    delivered: tuple[LeakView, ...]
    receivers: tuple[str, ...]


@dataclass(frozen=True)
class Deliver:
    msg_id: int
    to: str | None = None


@dataclass(frozen=True)
class Drop:
    msg_id: int


@dataclass(frozen=True)
class Replay:
    msg_id: int
    to: str | None = None


@dataclass(frozen=True)
class InjectPublic:
    payload: bytes
    to: str


@dataclass(frozen=True)
class NoOp:
    pass


Action = Union[Deliver, Drop, Replay, InjectPublic, NoOp]


def action_to_json(action: Action) -> dict[str, Any]:
    """Transcript form of an action."""
    if isinstance(action, Deliver):
        return {"action": "deliver", "msg_id": action.msg_id, "to": action.to}
    if isinstance(action, Drop):
        return {"action": "drop", "msg_id": action.msg_id}
    if isinstance(action, Replay):
        return {"action": "replay", "msg_id": action.msg_id, "to": action.to}
    if isinstance(action, InjectPublic):
        return {"action": "inject", "payload": action.payload.hex(), "to": action.to}
    return {"action": "noop"}


def action_from_json(record: Mapping[str, Any]) -> Action:
    """
    Rebuild an action from its transcript form.

    Raises:
        ValueError: If the record does not describe an action
    """
    kind = record.get("action")
    if kind == "deliver":
        return Deliver(int(record["msg_id"]), record.get("to"))
    if kind == "drop":
        return Drop(int(record["msg_id"]))
    if kind == "replay":
        return Replay(int(record["msg_id"]), record.get("to"))
    if kind == "inject":
        return InjectPublic(bytes.fromhex(record["payload"]), str(record["to"]))
    if kind == "noop":
        return NoOp()
    raise ValueError(f"not an action record: {dict(record)!r}")


class NoParams(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AdversaryPolicy(ABC):
    """
    Base class of every adversary policy.

    Subclasses set ``Params`` to a pydantic model describing their
    parameters and implement ``decide``. Policies may keep private state
    between steps; all randomness must come from the ``rng`` argument.
    """

    name: ClassVar[str] = ""
    summary: ClassVar[str] = ""
    Params: ClassVar[type[BaseModel]] = NoParams

    def __init__(self, params: Mapping[str, Any] | None = None) -> None:
        self.params = self.Params.model_validate(dict(params or {}))

    @abstractmethod
    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        """Choose the next action."""


P = TypeVar("P", bound=type[AdversaryPolicy])

_REGISTRY: dict[str, type[AdversaryPolicy]] = {}


def register_policy(name: str) -> Callable[[P], P]:
    """
    Class decorator registering a policy under ``name``.

    Raises:
        ValueError: If the name is already taken
    """

    def decorator(cls: P) -> P:
        if name in _REGISTRY:
            raise ValueError(f"policy {name!r} is already registered")
        cls.name = name
        _REGISTRY[name] = cls
        return cls

    return decorator


def build_policy(name: str, params: Mapping[str, Any] | None = None) -> AdversaryPolicy:
    """
    Instantiate a registered policy.

    Args:
        name: Registered policy name
        params: Policy parameters

    Returns:
        A fresh policy instance

    Raises:
        UnknownPolicy: If no policy is registered under ``name``
        ValueError: If the parameters do not validate
    """
    cls = _REGISTRY.get(name)
    if cls is None:
        raise UnknownPolicy(
            f"unknown policy {name!r}; available: {', '.join(available_policies())}"
        )
    logger.debug("Building policy %s with %s", name, dict(params or {}))
    try:
        return cls(params)
    except ValidationError as e:
        raise ValueError(f"invalid parameters for policy {name!r}: {e}") from e


def available_policies() -> list[str]:
    return sorted(_REGISTRY)


def policy_summaries() -> dict[str, str]:
    return {name: _REGISTRY[name].summary for name in available_policies()}


def _first(messages: Sequence[LeakView]) -> LeakView | None:
    return min(messages, key=lambda m: m.msg_id) if messages else None


@register_policy("eager")
class EagerPolicy(AdversaryPolicy):
    summary = "Deliver every pending message in send order."

    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        first = _first(view.pending)
        return Deliver(first.msg_id) if first else NoOp()


class RandomParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    deliver: float = Field(0.6, ge=0)
    drop: float = Field(0.1, ge=0)
    replay: float = Field(0.2, ge=0)
    redirect: float = Field(0.05, ge=0)
    noop: float = Field(0.05, ge=0)


@register_policy("random")
class RandomPolicy(AdversaryPolicy):
    """
    Seeded random scheduler.

    Each step picks an action kind by weight, then a message uniformly.
    Redirects only move public messages. Once nothing is pending it
    answers NoOp so the run can end.
    """

    summary = "Weighted random deliver/drop/replay/redirect/noop (seeded)."
    Params = RandomParams
    params: RandomParams

    _KINDS = ("deliver", "drop", "replay", "redirect", "noop")

    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        if not view.pending:
            return NoOp()
        params = self.params
        weights = [getattr(params, kind) for kind in self._KINDS]
        if sum(weights) <= 0:
            return Deliver(min(m.msg_id for m in view.pending))
        kind = rng.choices(self._KINDS, weights=weights)[0]

        if kind == "drop":
            return Drop(rng.choice(view.pending).msg_id)
        if kind == "replay" and view.delivered:
            return Replay(rng.choice(view.delivered).msg_id)
        if kind == "redirect":
            public = [m for m in view.pending if m.channel is Channel.PUBLIC]
            if public:
                message = rng.choice(public)
                targets = [r for r in view.receivers if r != message.receiver]
                if targets:
                    return Deliver(message.msg_id, rng.choice(targets))
        if kind == "noop":
            return NoOp()
        return Deliver(rng.choice(view.pending).msg_id)


class DropRateParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    p: float = Field(0.5, ge=0, le=1)


@register_policy("drop-rate")
class DropRatePolicy(AdversaryPolicy):
    summary = "Take messages in send order; drop each with probability p."
    Params = DropRateParams
    params: DropRateParams

    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        first = _first(view.pending)
        if first is None:
            return NoOp()
        if rng.random() < self.params.p:
            return Drop(first.msg_id)
        return Deliver(first.msg_id)


class DropTagsParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tags: list[str] = Field(default_factory=list)
    receivers: list[str] = Field(default_factory=list)


@register_policy("drop-tags")
class DropTagsPolicy(AdversaryPolicy):
    """
    Eager delivery, except that messages with one of ``tags`` are dropped.

    ``receivers`` optionally narrows the drop to messages addressed to
    those ids.
    """

    summary = "Eager, but drop messages of the listed kinds (optionally per receiver)."
    Params = DropTagsParams
    params: DropTagsParams

    def __init__(self, params: Mapping[str, Any] | None = None) -> None:
        super().__init__(params)
        known = set(TAG_NAMES.values())
        unknown = [tag for tag in self.params.tags if tag not in known]
        if unknown:
            raise ValueError(f"unknown message kinds: {', '.join(unknown)}")

    def _targeted(self, message: LeakView) -> bool:
        params = self.params
        if message.tag_name not in params.tags:
            return False
        return not params.receivers or message.receiver in params.receivers

    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        first = _first(view.pending)
        if first is None:
            return NoOp()
        if self._targeted(first):
            return Drop(first.msg_id)
        return Deliver(first.msg_id)


@register_policy("drop-all")
class DropAllPolicy(AdversaryPolicy):
    summary = "Drop every message."

    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        first = _first(view.pending)
        return Drop(first.msg_id) if first else NoOp()


class ReplayParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    copies: int = Field(2, ge=0, le=100)


@register_policy("replay-happy")
class ReplayHappyPolicy(AdversaryPolicy):
    summary = "Eager, replaying every delivered message `copies` extra times."
    Params = ReplayParams
    params: ReplayParams

    def __init__(self, params: Mapping[str, Any] | None = None) -> None:
        super().__init__(params)
        self._replayed: dict[int, int] = {}

    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        copies = self.params.copies
        for message in view.delivered:
            done = self._replayed.get(message.msg_id, 0)
            if done < copies:
                self._replayed[message.msg_id] = done + 1
                return Replay(message.msg_id)
        first = _first(view.pending)
        return Deliver(first.msg_id) if first else NoOp()


@register_policy("front-runner")
class FrontRunnerPolicy(AdversaryPolicy):
    """
    Copies every public ContractClose it sees on its way to the chain and
    delivers the copy first, under its own identity.
    """

    summary = "Race each observed ContractClose to the chain under the adversary id."

    def __init__(self, params: Mapping[str, Any] | None = None) -> None:
        super().__init__(params)
        self._copied: set[int] = set()

    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        for message in view.pending:
            if (
                message.tag is MessageTag.CONTRACT_CLOSE
                and message.payload is not None
                and message.msg_id not in self._copied
                and message.sender != ADVERSARY_ID
                and message.receiver == CHAIN_ID
            ):
                self._copied.add(message.msg_id)
                return InjectPublic(message.payload, message.receiver)
        first = _first(view.pending)
        return Deliver(first.msg_id) if first else NoOp()


class ScriptedParams(BaseModel):
    model_config = ConfigDict(extra="forbid")

    actions: list[dict[str, Any]] = Field(default_factory=list)


@register_policy("scripted")
class ScriptedPolicy(AdversaryPolicy):
    """
    Replays a fixed list of actions, then answers NoOp.

    Feeding a transcript's actions back through this policy reproduces the
    transcript.
    """

    summary = "Replay the actions recorded in a transcript."
    Params = ScriptedParams
    params: ScriptedParams

    def __init__(self, params: Mapping[str, Any] | None = None) -> None:
        super().__init__(params)
        self._script = [action_from_json(record) for record in self.params.actions]
        self._position = 0

    @classmethod
    def from_actions(cls, actions: Sequence[Action]) -> ScriptedPolicy:
        return cls({"actions": [action_to_json(action) for action in actions]})

    def decide(self, view: PolicyView, rng: random.Random) -> Action:
        if self._position >= len(self._script):
            return NoOp()
        action = self._script[self._position]
        self._position += 1
        return action
