"""
Scenario files: YAML documents describing one simulated exchange.

A scenario names the parties and their balances, the certificates the
notary issues, the offers buyers publish, the sell commands sellers
receive, the adversary policy and at most one statically corrupted party.

Example::

    name: honest
    seed: 1
    parties:
      - {id: notary, role: notary}
      - {id: seller, role: seller}
      - {id: buyer, role: buyer, balance: 1}
    certificates:
      - {sid: cert-1, seller: seller, message: "hello", attributes: {age: 34}}
    offers:
      - bid: offer-1
        buyer: buyer
        criterion:
          - in_range: {name: age, lo: 18, hi: 65}
    sells:
      - {seller: seller, sid: cert-1, bid: offer-1}
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Optional, Union

import yaml
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    StrictBool,
    StrictInt,
    StrictStr,
    ValidationError,
    field_validator,
    model_validator,
)

from fairex.chain import CHAIN_ID
from fairex.config import SimulatorConfig
from fairex.criteria import AttributeSet, Criterion, criterion_from_json
from fairex.crypto_suite import MAX_PLAINTEXT_LENGTH
from fairex.errors import (
    ScenarioIssue,
    ScenarioParseError,
    ScenarioValidationError,
    UnknownPolicy,
)
from fairex.parties import MULTICAST, NOTARY_BEHAVIORS, SELLER_BEHAVIORS, Role
from fairex.policies import ADVERSARY_ID, build_policy
from fairex.wire import OfferId, SessionId

logger = logging.getLogger(__name__)

RESERVED_IDS = frozenset({CHAIN_ID, ADVERSARY_ID, MULTICAST})

Loc = tuple[Union[str, int], ...]


def _check_label(label: str) -> str:
    # Raises ValueError for labels that do not fit an 8-octet id suffix
    SessionId.from_label("_", label)
    return label


class PartySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    id: str = Field(..., min_length=1)
    role: Role
    balance: int = Field(0, ge=0, lt=2**64)

    @field_validator("id")
    @classmethod
    def validate_id(cls, v: str) -> str:
        if "/" in v:
            raise ValueError("party ids must not contain '/'")
        if v in RESERVED_IDS:
            raise ValueError(f"{v!r} is a reserved id")
        return v


class CertificateSpec(BaseModel):
    """
    A certificate to issue at the start of the run.

    Attributes:
        sid: Label of the session id (at most 8 UTF-8 octets)
        seller: Seller the certificate is for
        notary: Issuing notary; may be omitted when there is only one
        message: The data M as UTF-8 text
        message_hex: The data M as hex; exactly one of message/message_hex
        attributes: The attribute set s
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    sid: str
    seller: str
    notary: Optional[str] = None
    message: Optional[str] = None
    message_hex: Optional[str] = None
    attributes: dict[str, Union[StrictBool, StrictInt, StrictStr]] = Field(
        default_factory=dict
    )

    @field_validator("sid")
    @classmethod
    def validate_sid(cls, v: str) -> str:
        return _check_label(v)

    @model_validator(mode="after")
    def validate_payload(self) -> CertificateSpec:
        if (self.message is None) == (self.message_hex is None):
            raise ValueError("exactly one of message and message_hex is required")
        if len(self.plaintext()) > MAX_PLAINTEXT_LENGTH:
            raise ValueError(f"message exceeds {MAX_PLAINTEXT_LENGTH} octets")
        self.attribute_set()
        return self

    def plaintext(self) -> bytes:
        if self.message_hex is not None:
            return bytes.fromhex(self.message_hex)
        return (self.message or "").encode("utf-8")

    def attribute_set(self) -> AttributeSet:
        return AttributeSet.of(self.attributes)


class OfferSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    bid: str
    buyer: str
    criterion: list[Any] = Field(default_factory=list)

    @field_validator("bid")
    @classmethod
    def validate_bid(cls, v: str) -> str:
        return _check_label(v)

    @field_validator("criterion")
    @classmethod
    def validate_criterion(cls, v: list[Any]) -> list[Any]:
        criterion_from_json(v)
        return v

    def offer_id(self) -> OfferId:
        return OfferId.from_label(self.buyer, self.bid)

    def criterion_value(self) -> Criterion:
        return criterion_from_json(self.criterion)


class SellSpec(BaseModel):
    """
    Environment Sell(sid, bid) input to a seller.

    Fires at the first step >= ``at_step`` at which the seller holds the
    certificate and the offer; with ``wait: false`` it fires at ``at_step``
    regardless.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    seller: str
    sid: str
    bid: str
    at_step: int = Field(0, ge=0)
    wait: bool = True


class AdversarySpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    policy: str = "eager"
    params: dict[str, Any] = Field(default_factory=dict)


class CorruptionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    party: str
    behavior: str
    params: dict[str, Any] = Field(default_factory=dict)


class Scenario(BaseModel):
    """A validated scenario. Build one with ``load_scenario`` or ``parse_scenario``."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = Field(..., min_length=1)
    description: Optional[str] = None
    seed: int = Field(..., ge=0)
    step_budget: Optional[int] = Field(None, gt=0)
    price: Optional[int] = Field(None, gt=0, lt=2**64)
    parties: list[PartySpec] = Field(..., min_length=1)
    certificates: list[CertificateSpec] = Field(default_factory=list)
    offers: list[OfferSpec] = Field(default_factory=list)
    sells: list[SellSpec] = Field(default_factory=list)
    adversary: AdversarySpec = Field(default_factory=AdversarySpec)
    corruption: Optional[CorruptionSpec] = None

    def role_of(self, party_id: str) -> Role | None:
        for party in self.parties:
            if party.id == party_id:
                return party.role
        return None

    def ids_with_role(self, role: Role) -> list[str]:
        return [party.id for party in self.parties if party.role is role]

    def initial_balances(self) -> dict[str, int]:
        return {party.id: party.balance for party in self.parties}

    def effective_price(self) -> int:
        return self.price if self.price is not None else 1

    def notary_of(self, cert: CertificateSpec) -> str:
        if cert.notary is not None:
            return cert.notary
        return self.ids_with_role(Role.NOTARY)[0]

    def session_id(self, cert: CertificateSpec) -> SessionId:
        return SessionId.from_label(self.notary_of(cert), cert.sid)

    def certificate(self, label: str) -> CertificateSpec:
        for cert in self.certificates:
            if cert.sid == label:
                return cert
        raise KeyError(f"no certificate labelled {label!r}")

    def offer(self, label: str) -> OfferSpec:
        for offer in self.offers:
            if offer.bid == label:
                return offer
        raise KeyError(f"no offer labelled {label!r}")

    def header(self) -> dict[str, Any]:
        """Scenario fields recorded at the top of every transcript."""
        return {
            "scenario": self.name,
            "price": self.effective_price(),
            "parties": [
                {"id": p.id, "role": p.role.value, "balance": p.balance}
                for p in self.parties
            ],
            "adversary": {"policy": self.adversary.policy, "params": self.adversary.params},
            "corruption": self.corruption.model_dump() if self.corruption else None,
        }


def _reference_issues(scenario: Scenario) -> list[tuple[Loc, str]]:
    issues: list[tuple[Loc, str]] = []
    roles: dict[str, Role] = {}
    for i, party in enumerate(scenario.parties):
        if party.id in roles:
            issues.append((("parties", i, "id"), f"duplicate party id {party.id!r}"))
        roles[party.id] = party.role

    notaries = scenario.ids_with_role(Role.NOTARY)
    if not notaries:
        issues.append((("parties",), "at least one notary is required"))

    def expect(loc: Loc, party_id: Optional[str], role: Role) -> None:
        if party_id is None:
            return
        if party_id not in roles:
            issues.append((loc, f"unknown party {party_id!r}"))
        elif roles[party_id] is not role:
            issues.append((loc, f"party {party_id!r} is not a {role.value}"))

    labels: set[str] = set()
    for i, cert in enumerate(scenario.certificates):
        expect(("certificates", i, "seller"), cert.seller, Role.SELLER)
        expect(("certificates", i, "notary"), cert.notary, Role.NOTARY)
        if cert.notary is None and len(notaries) > 1:
            issues.append(
                (("certificates", i), "notary is required when there are several notaries")
            )
        if cert.sid in labels:
            issues.append((("certificates", i, "sid"), f"duplicate certificate {cert.sid!r}"))
        labels.add(cert.sid)

    offer_labels: set[str] = set()
    for i, offer in enumerate(scenario.offers):
        expect(("offers", i, "buyer"), offer.buyer, Role.BUYER)
        if offer.bid in offer_labels:
            issues.append((("offers", i, "bid"), f"duplicate offer {offer.bid!r}"))
        offer_labels.add(offer.bid)

    for i, sell in enumerate(scenario.sells):
        expect(("sells", i, "seller"), sell.seller, Role.SELLER)
        if sell.sid not in labels:
            issues.append((("sells", i, "sid"), f"unknown certificate {sell.sid!r}"))
        if sell.bid not in offer_labels:
            issues.append((("sells", i, "bid"), f"unknown offer {sell.bid!r}"))

    try:
        build_policy(scenario.adversary.policy, scenario.adversary.params)
    except UnknownPolicy as e:
        issues.append((("adversary", "policy"), str(e)))
    except ValueError as e:
        issues.append((("adversary", "params"), str(e)))

    corruption = scenario.corruption
    if corruption is not None:
        role = roles.get(corruption.party)
        if role is None:
            issues.append((("corruption", "party"), f"unknown party {corruption.party!r}"))
        elif role is Role.NOTARY:
            if corruption.behavior not in NOTARY_BEHAVIORS:
                issues.append(
                    (
                        ("corruption", "behavior"),
                        f"notary behaviors are {', '.join(sorted(NOTARY_BEHAVIORS))}",
                    )
                )
        elif role is Role.SELLER:
            if corruption.behavior not in SELLER_BEHAVIORS:
                issues.append(
                    (
                        ("corruption", "behavior"),
                        f"seller behaviors are {', '.join(sorted(SELLER_BEHAVIORS))}",
                    )
                )
            wrong_keys = corruption.params.get("wrong_keys", 0)
            if not isinstance(wrong_keys, int) or isinstance(wrong_keys, bool) or wrong_keys < 0:
                issues.append(
                    (("corruption", "params", "wrong_keys"), "must be a non-negative integer")
                )
        else:
            issues.append((("corruption", "party"), "only a notary or a seller can be corrupted"))
    return issues


def _line_of(node: Optional[yaml.Node], loc: Sequence[Union[str, int]]) -> Optional[int]:
    """1-based line of the deepest YAML node reachable along ``loc``."""
    if node is None:
        return None
    line = node.start_mark.line + 1
    for part in loc:
        child: Optional[yaml.Node] = None
        if isinstance(node, yaml.MappingNode):
            for key, value in node.value:
                if key.value == part:
                    child = value
                    break
        elif isinstance(node, yaml.SequenceNode) and isinstance(part, int):
            if 0 <= part < len(node.value):
                child = node.value[part]
        if child is None:
            break
        node = child
        line = node.start_mark.line + 1
    return line


def _dotted(loc: Sequence[Union[str, int]]) -> str:
    return ".".join(str(part) for part in loc) or "<root>"


def parse_scenario(
    text: str,
    source: str = "<string>",
    config: Optional[SimulatorConfig] = None,
) -> Scenario:
    """
    Parse and validate a scenario document.

    Args:
        text: YAML text
        source: Name used in log messages
        config: Supplies ``default_price`` when the scenario sets no price

    Returns:
        The validated scenario

    Raises:
        ScenarioParseError: If the text is not a YAML mapping
        ScenarioValidationError: With every schema and reference problem
    """
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioParseError(
            f"{source}: invalid YAML: {getattr(e, 'problem', None) or e}",
            line=mark.line + 1 if mark is not None else None,
        ) from e
    if not isinstance(data, dict):
        raise ScenarioParseError(f"{source}: a scenario must be a YAML mapping", line=1)

    try:
        scenario = Scenario.model_validate(data)
    except ValidationError as e:
        issues = [
            ScenarioIssue(_dotted(err["loc"]), err["msg"], _line_of(root, err["loc"]))
            for err in e.errors()
        ]
        raise ScenarioValidationError(issues) from e

    problems = _reference_issues(scenario)
    if problems:
        raise ScenarioValidationError(
            [ScenarioIssue(_dotted(loc), msg, _line_of(root, loc)) for loc, msg in problems]
        )

    if scenario.price is None and config is not None:
        scenario = scenario.model_copy(update={"price": config.default_price})
    logger.debug("Loaded scenario %s from %s", scenario.name, source)
    return scenario


def load_scenario(path: str | Path, config: Optional[SimulatorConfig] = None) -> Scenario:
    """
    Load a scenario file.

    Raises:
        FileNotFoundError: If ``path`` does not exist
        ScenarioParseError: If the file is not valid YAML
        ScenarioValidationError: If it fails validation
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_scenario(text, source=str(path), config=config)
