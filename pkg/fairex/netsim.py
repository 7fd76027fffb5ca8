"""
The adversary-controlled network.

Nothing reaches a party unless the adversary policy delivers it. Each step
the policy sees a leak view of the network and picks one action; delivering
runs the receiver's handler, whose sends are enqueued in turn. The chain is
a receiver like any other, and every tape event it appends is enqueued to
each seller and buyer as a separate message, so tape delivery is under the
adversary's control too.

A run is a pure function of (scenario, seed): party keys, nonces and the
policy's choices all come from ``random.Random`` instances seeded from the
run seed, one per purpose.
"""

from __future__ import annotations

import logging
import random
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Any, Optional, TypeVar, Union

from fairex.chain import CHAIN_ID, Chain, ContractStatus, TapeEvent
from fairex.config import DEFAULT_STEP_BUDGET
from fairex.crypto_suite import SigKeyPair, gen_signing_keypair, hash_data
from fairex.errors import (
    IgnoreReason,
    MalformedEncoding,
    PolicyViolation,
    StepBudgetExceeded,
)
from fairex.harness.scenario import Scenario, SellSpec
from fairex.harness.transcript import Transcript
from fairex.parties import (
    MULTICAST,
    Buyer,
    KeyDirectory,
    Notary,
    Reaction,
    Role,
    Seller,
    build_corrupted_notary,
    build_corrupted_seller,
)
from fairex.policies import (
    ADVERSARY_ID,
    Action,
    AdversaryPolicy,
    Deliver,
    Drop,
    InjectPublic,
    LeakView,
    NoOp,
    PolicyView,
    Replay,
    action_to_json,
    build_policy,
)
from fairex.wire import (
    CONFIDENTIAL_TAGS,
    Buying,
    CertifyInput,
    Channel,
    ContractClose,
    ContractOpen,
    OfferId,
    SessionId,
    decode,
    encode,
    peek_tag,
    tag_name,
)

logger = logging.getLogger(__name__)

Party = Union[Notary, Seller, Buyer]
ChainFactory = Callable[[Mapping[str, int]], Chain]
Observer = Callable[["RunState"], None]

T = TypeVar("T")


@dataclass
class InFlight:
    """A message in the network. The payload is the encoded message."""

    msg_id: int
    sender: str
    receiver: str
    channel: Channel
    payload: bytes

    def leak(self) -> LeakView:
        """The adversary's view: everything on public channels, tag and size otherwise."""
        public = self.channel is Channel.PUBLIC
        return LeakView(
            msg_id=self.msg_id,
            sender=self.sender,
            receiver=self.receiver,
            channel=self.channel,
            tag=peek_tag(self.payload),
            length=len(self.payload),
            payload=self.payload if public else None,
        )


@dataclass
class RunState:
    """Everything one run owns. Advanced only by ``step``."""

    scenario: Scenario
    seed: int
    chain: Chain
    directory: KeyDirectory
    parties: dict[str, Party]
    policy: AdversaryPolicy
    transcript: Transcript
    crypto_rng: random.Random
    policy_rng: random.Random
    step_budget: int
    corrupted: Optional[str] = None
    pending: dict[int, InFlight] = field(default_factory=dict)
    delivered: dict[int, InFlight] = field(default_factory=dict)
    next_msg_id: int = 0
    step_count: int = 0
    fired_sells: set[int] = field(default_factory=set)
    finished: bool = False

    def receivers(self) -> tuple[str, ...]:
        return (CHAIN_ID, *self.parties)

    def ids_with_role(self, role: Role) -> list[str]:
        return self.scenario.ids_with_role(role)

    def tape_subscribers(self) -> list[str]:
        return [
            p.id for p in self.scenario.parties if p.role in (Role.SELLER, Role.BUYER)
        ]

    def party_as(self, party_id: str, kind: type[T]) -> T:
        party = self.parties[party_id]
        if not isinstance(party, kind):
            raise TypeError(f"party {party_id} is not a {kind.__name__}")
        return party


def _build_parties(
    scenario: Scenario,
    seed: int,
    crypto_rng: random.Random,
) -> tuple[KeyDirectory, dict[str, Party]]:
    directory = KeyDirectory()
    keypairs: dict[str, SigKeyPair] = {}
    for notary_id in scenario.ids_with_role(Role.NOTARY):
        keypairs[notary_id] = gen_signing_keypair(crypto_rng)
        directory.register(notary_id, keypairs[notary_id].verify_key, notary=True)

    corruption = scenario.corruption
    price = scenario.effective_price()
    parties: dict[str, Party] = {}
    for spec in scenario.parties:
        corrupt = corruption is not None and corruption.party == spec.id
        if spec.role is Role.NOTARY:
            if corrupt and corruption is not None:
                parties[spec.id] = build_corrupted_notary(
                    spec.id, keypairs[spec.id], corruption.behavior, corruption.params
                )
            else:
                parties[spec.id] = Notary(spec.id, keypairs[spec.id])
        elif spec.role is Role.SELLER:
            if corrupt and corruption is not None:
                parties[spec.id] = build_corrupted_seller(
                    spec.id,
                    directory,
                    corruption.behavior,
                    corruption.params,
                    random.Random(f"{seed}/corrupt/{spec.id}"),
                    price,
                )
            else:
                parties[spec.id] = Seller(spec.id, directory, price)
        else:
            parties[spec.id] = Buyer(spec.id, directory, price)
    return directory, parties


def setup(
    scenario: Scenario,
    seed: Optional[int] = None,
    *,
    chain_factory: ChainFactory = Chain,
    policy: Optional[AdversaryPolicy] = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
) -> RunState:
    """
    Build the initial run state and write the transcript header.

    Args:
        scenario: A validated scenario
        seed: Run seed; defaults to the scenario's seed
        chain_factory: Builds the chain from the initial balances
        policy: Overrides the scenario's policy (the header still names the
            scenario's policy, so a scripted replay reproduces the header)
        step_budget: Used when the scenario sets no budget of its own

    Returns:
        A RunState at step 0
    """
    seed = scenario.seed if seed is None else seed
    crypto_rng = random.Random(f"{seed}/crypto")
    directory, parties = _build_parties(scenario, seed, crypto_rng)
    rs = RunState(
        scenario=scenario,
        seed=seed,
        chain=chain_factory(scenario.initial_balances()),
        directory=directory,
        parties=parties,
        policy=policy or build_policy(scenario.adversary.policy, scenario.adversary.params),
        transcript=Transcript(),
        crypto_rng=crypto_rng,
        policy_rng=random.Random(f"{seed}/policy"),
        step_budget=scenario.step_budget or step_budget,
        corrupted=scenario.corruption.party if scenario.corruption else None,
    )
    rs.transcript.append(
        "header",
        **scenario.header(),
        seed=seed,
        step_budget=rs.step_budget,
        notary_keys={party: key.hex() for party, key in directory.notaries().items()},
    )
    return rs


def enqueue(
    rs: RunState, sender: str, receiver: str, channel: Channel, payload: bytes
) -> int:
    """
    Put a message into the network.

    Returns:
        The new message id
    """
    msg_id = rs.next_msg_id
    rs.next_msg_id += 1
    flight = InFlight(msg_id, sender, receiver, channel, payload)
    rs.pending[msg_id] = flight
    rs.transcript.append(
        "enqueue",
        step=rs.step_count,
        msg_id=msg_id,
        sender=sender,
        receiver=receiver,
        channel=channel.value,
        tag=tag_name(peek_tag(payload)),
        length=len(payload),
        payload=payload.hex(),
    )
    logger.debug("Enqueued #%d %s -> %s (%s)", msg_id, sender, receiver, channel.value)
    return msg_id


def policy_view(rs: RunState) -> PolicyView:
    return PolicyView(
        step=rs.step_count,
        pending=tuple(flight.leak() for flight in rs.pending.values()),
        delivered=tuple(flight.leak() for flight in rs.delivered.values()),
        receivers=rs.receivers(),
    )


def _record_ignore(
    rs: RunState, party: str, reason: IgnoreReason, msg_id: Optional[int]
) -> None:
    rs.transcript.append(
        "ignore", step=rs.step_count, party=party, reason=reason.value, msg_id=msg_id
    )


def _apply_reaction(
    rs: RunState, party_id: str, reaction: Reaction, msg_id: Optional[int]
) -> None:
    if reaction.ignored is not None:
        _record_ignore(rs, party_id, reaction.ignored, msg_id)
    for output in reaction.outputs:
        rs.transcript.append("output", step=rs.step_count, **output.to_json())
        logger.info("%s output %s(%s)", output.party, output.kind.value, output.ref)
    for send in reaction.sends:
        receivers = (
            rs.ids_with_role(Role.SELLER) if send.receiver == MULTICAST else [send.receiver]
        )
        payload = encode(send.message)
        for receiver in receivers:
            enqueue(rs, party_id, receiver, send.channel, payload)


def _owned(rs: RunState) -> dict[str, int]:
    parties = set(rs.scenario.initial_balances()) | set(rs.chain.parties())
    return {party: rs.chain.owned_by(party) for party in sorted(parties)}


def _publish(rs: RunState, events: tuple[TapeEvent, ...]) -> None:
    for event in events:
        rs.transcript.append(
            "chain",
            step=rs.step_count,
            index=event.index,
            tag=tag_name(event.payload.tag),
            payload=encode(event.payload).hex(),
        )
    rs.transcript.append(
        "ledger", step=rs.step_count, **rs.chain.snapshot(), owned=_owned(rs)
    )
    for event in events:
        payload = encode(event.payload)
        for subscriber in rs.tape_subscribers():
            enqueue(rs, CHAIN_ID, subscriber, Channel.PUBLIC, payload)


def _deliver(rs: RunState, flight: InFlight, receiver: str) -> None:
    try:
        message = decode(flight.payload)
    except MalformedEncoding:
        _record_ignore(rs, receiver, IgnoreReason.MALFORMED_ENCODING, flight.msg_id)
        return

    if receiver != CHAIN_ID:
        reaction = rs.parties[receiver].handle(flight.sender, message)
        _apply_reaction(rs, receiver, reaction, flight.msg_id)
        return

    if isinstance(message, ContractOpen):
        receipt = rs.chain.submit_open(flight.sender, message)
    elif isinstance(message, ContractClose):
        receipt = rs.chain.submit_close(flight.sender, message)
    else:
        _record_ignore(rs, CHAIN_ID, IgnoreReason.UNEXPECTED_MESSAGE, flight.msg_id)
        return
    if receipt.ignored is not None:
        _record_ignore(rs, CHAIN_ID, receipt.ignored, flight.msg_id)
    else:
        _publish(rs, receipt.events)


def _violation(message: str) -> PolicyViolation:
    logger.error("Policy violation: %s", message)
    return PolicyViolation(message)


def _target(rs: RunState, flight: InFlight, to: Optional[str]) -> str:
    receiver = flight.receiver if to is None else to
    if receiver not in rs.receivers():
        raise _violation(f"unknown receiver {receiver!r}")
    if flight.channel is Channel.CONFIDENTIAL and receiver != flight.receiver:
        raise _violation(
            f"message #{flight.msg_id} is confidential and addressed to {flight.receiver}"
        )
    return receiver


def _inject(rs: RunState, action: InjectPublic) -> None:
    fields = action_to_json(action)
    tag = peek_tag(action.payload)
    problem = None
    if tag in CONFIDENTIAL_TAGS:
        problem = f"cannot inject {tag_name(tag)}: confidential channels only"
    elif action.to not in rs.receivers():
        problem = f"unknown receiver {action.to!r}"
    if problem is not None:
        rs.transcript.append("action", step=rs.step_count, **fields)
        raise _violation(problem)

    # The enqueue record must precede the action that delivers it
    msg_id = enqueue(rs, ADVERSARY_ID, action.to, Channel.PUBLIC, action.payload)
    rs.transcript.append("action", step=rs.step_count, msg_id=msg_id, **fields)
    flight = rs.pending.pop(msg_id)
    rs.delivered[msg_id] = flight
    _deliver(rs, flight, action.to)


def _apply_action(rs: RunState, action: Action) -> None:
    if isinstance(action, InjectPublic):
        _inject(rs, action)
        return
    rs.transcript.append("action", step=rs.step_count, **action_to_json(action))

    if isinstance(action, Deliver):
        flight = rs.pending.get(action.msg_id)
        if flight is None:
            raise _violation(f"message #{action.msg_id} is not pending")
        receiver = _target(rs, flight, action.to)
        del rs.pending[action.msg_id]
        rs.delivered[action.msg_id] = flight
        _deliver(rs, flight, receiver)
    elif isinstance(action, Drop):
        if rs.pending.pop(action.msg_id, None) is None:
            raise _violation(f"message #{action.msg_id} is not pending")
    elif isinstance(action, Replay):
        flight = rs.delivered.get(action.msg_id)
        if flight is None:
            raise _violation(f"message #{action.msg_id} was never delivered")
        _deliver(rs, flight, _target(rs, flight, action.to))


def _sell_ids(rs: RunState, sell: SellSpec) -> tuple[SessionId, OfferId]:
    sid = rs.scenario.session_id(rs.scenario.certificate(sell.sid))
    return sid, rs.scenario.offer(sell.bid).offer_id()


def _sell_ready(rs: RunState, sell: SellSpec) -> bool:
    if not sell.wait:
        return True
    seller = rs.party_as(sell.seller, Seller)
    sid, bid = _sell_ids(rs, sell)
    return sid in seller.certificates and bid in seller.offers


def _sells_fireable(rs: RunState) -> bool:
    return any(
        i not in rs.fired_sells and _sell_ready(rs, sell)
        for i, sell in enumerate(rs.scenario.sells)
    )


def _fire_initial_inputs(rs: RunState) -> None:
    scenario = rs.scenario
    for cert in scenario.certificates:
        sid = scenario.session_id(cert)
        plaintext, attributes = cert.plaintext(), cert.attribute_set()
        rs.transcript.append(
            "env",
            step=rs.step_count,
            input="certify",
            party=sid.notary_id,
            payload=encode(CertifyInput(sid, cert.seller, plaintext, attributes)).hex(),
        )
        notary = rs.party_as(sid.notary_id, Notary)
        reaction = notary.certify(sid, cert.seller, plaintext, attributes, rs.crypto_rng)
        _apply_reaction(rs, sid.notary_id, reaction, None)

    for offer in scenario.offers:
        bid, criterion = offer.offer_id(), offer.criterion_value()
        rs.transcript.append(
            "env",
            step=rs.step_count,
            input="buy",
            party=offer.buyer,
            payload=encode(Buying(bid, criterion)).hex(),
        )
        reaction = rs.party_as(offer.buyer, Buyer).make_offer(bid, criterion)
        _apply_reaction(rs, offer.buyer, reaction, None)


def _fire_sells(rs: RunState) -> None:
    for i, sell in enumerate(rs.scenario.sells):
        if i in rs.fired_sells or rs.step_count < sell.at_step:
            continue
        if not _sell_ready(rs, sell):
            continue
        rs.fired_sells.add(i)
        sid, bid = _sell_ids(rs, sell)
        rs.transcript.append(
            "env",
            step=rs.step_count,
            input="sell",
            party=sell.seller,
            sid=str(sid),
            bid=str(bid),
        )
        reaction = rs.party_as(sell.seller, Seller).sell(sid, bid)
        _apply_reaction(rs, sell.seller, reaction, None)


def _final_record(rs: RunState) -> dict[str, Any]:
    return {
        "step": rs.step_count,
        **rs.chain.snapshot(),
        "owned": _owned(rs),
        "contracts": [
            {
                "bid": str(c.bid),
                "payer": c.payer,
                "amount": c.amount,
                "status": c.status.value,
                "payee": c.payee,
            }
            for c in sorted(rs.chain.contracts(), key=lambda c: c.bid)
        ],
    }


def step(rs: RunState) -> RunState:
    """
    Advance the run by one adversary action.

    Environment inputs due at this step fire first, then the policy picks
    an action, which is recorded and applied. The run finishes when the
    policy answers NoOp with nothing pending and no sell input left to fire.

    Raises:
        PolicyViolation: If the policy's action breaks the network model
        RuntimeError: If the run has already finished
    """
    if rs.finished:
        raise RuntimeError("run already finished")
    if rs.step_count == 0:
        _fire_initial_inputs(rs)
    _fire_sells(rs)

    action = rs.policy.decide(policy_view(rs), rs.policy_rng)
    _apply_action(rs, action)

    if isinstance(action, NoOp) and not rs.pending and not _sells_fireable(rs):
        rs.finished = True
        rs.transcript.append("final", **_final_record(rs))
    rs.step_count += 1
    return rs


def simulate(
    scenario: Scenario,
    seed: Optional[int] = None,
    *,
    chain_factory: ChainFactory = Chain,
    policy: Optional[AdversaryPolicy] = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
    observer: Optional[Observer] = None,
) -> RunState:
    """
    Run a scenario to completion.

    Args:
        scenario: A validated scenario
        seed: Run seed; defaults to the scenario's seed
        chain_factory: Builds the chain (tests swap in mutated chains)
        policy: Overrides the scenario's adversary policy
        step_budget: Budget when the scenario sets none
        observer: Called with the run state after every step

    Returns:
        The final run state

    Raises:
        StepBudgetExceeded: With the partial transcript, if the run does not
            finish within its budget
    """
    rs = setup(
        scenario, seed, chain_factory=chain_factory, policy=policy, step_budget=step_budget
    )
    while not rs.finished:
        if rs.step_count >= rs.step_budget:
            logger.warning(
                "Scenario %s seed %d exhausted its budget of %d steps",
                scenario.name,
                rs.seed,
                rs.step_budget,
            )
            raise StepBudgetExceeded(rs.step_budget, rs.transcript)
        step(rs)
        if observer is not None:
            observer(rs)
    return rs


def run(
    scenario: Scenario,
    seed: Optional[int] = None,
    *,
    chain_factory: ChainFactory = Chain,
    policy: Optional[AdversaryPolicy] = None,
    step_budget: int = DEFAULT_STEP_BUDGET,
    observer: Optional[Observer] = None,
) -> Transcript:
    """Run a scenario and return its transcript. See ``simulate``."""
    return simulate(
        scenario,
        seed,
        chain_factory=chain_factory,
        policy=policy,
        step_budget=step_budget,
        observer=observer,
    ).transcript


# --- run checks ---


def designated_seller(rs: RunState, bid: OfferId) -> Optional[str]:
    """The seller whose pending sale of ``bid`` matches the contract's lock."""
    contract = rs.chain.contract(bid)
    if contract is None:
        return None
    for party_id, party in rs.parties.items():
        if not isinstance(party, Seller) or bid not in party.pending:
            continue
        if party.certificates[party.pending[bid]].key_hash == contract.condition:
            return party_id
    return None


def fairness_holds(rs: RunState) -> bool:
    """
    The key for a contract is on the tape iff the seller who sold it was paid.

    Both happen in the same close step, so this must hold after every step.
    """
    for contract in rs.chain.contracts():
        key_published = contract.status is ContractStatus.CLOSED
        seller_paid = key_published and contract.payee == designated_seller(rs, contract.bid)
        if key_published != seller_paid:
            return False
    return True


def hash_lock_sound(rs: RunState) -> bool:
    """Every key on the tape opens the hash lock of its contract."""
    for contract in rs.chain.contracts():
        if contract.key is not None and hash_data(contract.key.raw) != contract.condition:
            return False
    return True


def conservation_holds(rs: RunState) -> bool:
    """Balances plus immobilized tokens equal the initial supply."""
    total = sum(rs.chain.balance_of(p) for p in rs.chain.parties())
    return total + rs.chain.immobilized_total() == rs.chain.total_supply
