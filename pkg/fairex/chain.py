"""
The blockchain as one sequential state machine.

The chain keeps a token ledger, the hash-locked contracts, and an
append-only public tape. It never raises on protocol input: a submission
that breaks a rule leaves the state untouched and comes back with an
``IgnoreReason``, the way the chain in the protocol silently waits for a
better message.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from fairex.crypto_suite import Digest, SymKey, hash_data
from fairex.errors import IgnoreReason, LedgerInvariantError, NegativeBalance
from fairex.wire import ContractClose, ContractOpen, LedgerUpdate, Message, OfferId

logger = logging.getLogger(__name__)

CHAIN_ID = "chain"


@dataclass
class Ledger:
    """Spendable balances plus tokens immobilized per contract."""

    balances: dict[str, int] = field(default_factory=dict)
    immobilized: dict[OfferId, tuple[str, int]] = field(default_factory=dict)

    def total(self) -> int:
        return sum(self.balances.values()) + sum(
            amount for _, amount in self.immobilized.values()
        )


def init_ledger(initial: Mapping[str, int]) -> Ledger:
    """
    Build the initial ledger.

    Args:
        initial: Party id to token count

    Returns:
        Ledger with the given balances and nothing immobilized

    Raises:
        NegativeBalance: If any count is negative
    """
    for party, count in initial.items():
        if count < 0:
            raise NegativeBalance(f"initial balance of {party} is {count}")
    return Ledger(balances=dict(initial))


class ContractStatus(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass
class Contract:
    """'Pay ``amount`` if x : H(x) = ``condition``', opened by ``payer``."""

    bid: OfferId
    payer: str
    condition: Digest
    amount: int
    status: ContractStatus = ContractStatus.OPEN
    payee: str | None = None
    key: SymKey | None = None


@dataclass(frozen=True)
class TapeEvent:
    """One entry of the public tape."""

    index: int
    payload: Message


@dataclass(frozen=True)
class ChainReceipt:
    """Result of one submission: tape events appended, or why it was ignored."""

    events: tuple[TapeEvent, ...] = ()
    ignored: IgnoreReason | None = None

    @property
    def accepted(self) -> bool:
        return self.ignored is None


class Chain:
    """
    Ledger, contracts and tape.

    Args:
        initial: Party id to initial token count
    """

    def __init__(self, initial: Mapping[str, int]) -> None:
        self._ledger = init_ledger(initial)
        self._contracts: dict[OfferId, Contract] = {}
        self._tape: list[TapeEvent] = []
        self.total_supply = self._ledger.total()

    def submit_open(self, sender: str, message: ContractOpen) -> ChainReceipt:
        """
        Handle a Contract Open.

        The first open for an id whose sender can cover the amount
        immobilizes the tokens, records an open contract and is written to
        the tape. Anything else is ignored.

        Args:
            sender: Party that submitted the message
            message: The open request

        Returns:
            Receipt with the appended tape event, or the ignore reason
        """
        if message.bid in self._contracts:
            return self._ignore(IgnoreReason.OPEN_DUPLICATE_ID, message.bid)
        if message.amount <= 0:
            return self._ignore(IgnoreReason.OPEN_BAD_AMOUNT, message.bid)
        if self.balance_of(sender) < message.amount:
            return self._ignore(IgnoreReason.OPEN_INSUFFICIENT_BALANCE, message.bid)

        self._ledger.balances[sender] -= message.amount
        self._ledger.immobilized[message.bid] = (sender, message.amount)
        self._contracts[message.bid] = Contract(
            bid=message.bid,
            payer=sender,
            condition=message.condition,
            amount=message.amount,
        )
        logger.info("Contract %s opened by %s for %d", message.bid, sender, message.amount)
        event = self._append(message)
        self.check_invariants()
        return ChainReceipt(events=(event,))

    def submit_close(self, sender: str, message: ContractClose) -> ChainReceipt:
        """
        Handle a Contract Close.

        If an open contract with this id exists and the key opens its hash
        lock, the immobilized tokens go to ``sender`` (whoever that is), the
        contract closes for good, and the close plus a ledger update are
        written to the tape.

        Args:
            sender: Party that submitted the message; it is the one paid
            message: The close request carrying the key

        Returns:
            Receipt with the appended tape events, or the ignore reason
        """
        contract = self._contracts.get(message.bid)
        if contract is None:
            return self._ignore(IgnoreReason.CLOSE_UNKNOWN_CONTRACT, message.bid)
        if contract.status is ContractStatus.CLOSED:
            return self._ignore(IgnoreReason.CLOSE_ALREADY_CLOSED, message.bid)
        if not self._unlocks(contract, message.key):
            return self._ignore(IgnoreReason.CLOSE_HASH_MISMATCH, message.bid)

        _, amount = self._ledger.immobilized.pop(message.bid)
        self._ledger.balances[sender] = self.balance_of(sender) + amount
        contract.status = ContractStatus.CLOSED
        contract.payee = sender
        contract.key = message.key
        logger.info("Contract %s closed, %d paid to %s", message.bid, amount, sender)

        close_event = self._append(message)
        update_event = self._append(
            LedgerUpdate(
                bid=message.bid,
                payee=sender,
                amount=amount,
                balances=tuple(sorted(self._ledger.balances.items())),
            )
        )
        self.check_invariants()
        return ChainReceipt(events=(close_event, update_event))

    def read_tape(self, from_index: int = 0) -> list[TapeEvent]:
        """Tape events with index >= ``from_index``, in order."""
        return list(self._tape[max(from_index, 0) :])

    def balance_of(self, party: str) -> int:
        """Spendable balance; 0 for parties the ledger has never seen."""
        return self._ledger.balances.get(party, 0)

    def owned_by(self, party: str) -> int:
        """Spendable balance plus the tokens ``party`` has immobilized."""
        escrowed = sum(
            amount for payer, amount in self._ledger.immobilized.values() if payer == party
        )
        return self.balance_of(party) + escrowed

    def immobilized_total(self) -> int:
        return sum(amount for _, amount in self._ledger.immobilized.values())

    def contract(self, bid: OfferId) -> Contract | None:
        return self._contracts.get(bid)

    def contracts(self) -> list[Contract]:
        return list(self._contracts.values())

    def open_contracts(self) -> list[Contract]:
        return [c for c in self._contracts.values() if c.status is ContractStatus.OPEN]

    def parties(self) -> list[str]:
        return sorted(self._ledger.balances)

    def snapshot(self) -> dict[str, Any]:
        """JSON-ready view of the ledger for transcripts."""
        return {
            "balances": dict(sorted(self._ledger.balances.items())),
            "immobilized": {
                str(bid): [payer, amount]
                for bid, (payer, amount) in sorted(self._ledger.immobilized.items())
            },
        }

    def check_invariants(self) -> None:
        """
        Re-check token conservation.

        Raises:
            LedgerInvariantError: If balances are negative or the total moved
        """
        if any(count < 0 for count in self._ledger.balances.values()):
            raise LedgerInvariantError("negative balance on the ledger")
        total = self._ledger.total()
        if total != self.total_supply:
            raise LedgerInvariantError(
                f"token supply changed from {self.total_supply} to {total}"
            )

    def _unlocks(self, contract: Contract, key: SymKey) -> bool:
        return hash_data(key.raw) == contract.condition

    def _append(self, payload: Message) -> TapeEvent:
        event = TapeEvent(index=len(self._tape), payload=payload)
        self._tape.append(event)
        return event

    def _ignore(self, reason: IgnoreReason, bid: OfferId) -> ChainReceipt:
        logger.debug("Chain ignored submission for %s: %s", bid, reason.value)
        return ChainReceipt(ignored=reason)
