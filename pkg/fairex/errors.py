"""
Exceptions and ignore reason codes shared across the simulator.

Exceptions signal bugs, bad inputs or broken invariants and are raised
loudly. Protocol-level rejections are not exceptions: a party or the chain
that ignores a message reports one of the ``IgnoreReason`` codes instead,
and the code ends up in the transcript.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any


class FairexError(Exception):
    """Base class for every error raised by the simulator."""


# --- crypto_suite ---


class PlaintextTooLarge(FairexError):
    """Plaintext exceeds the configured maximum length."""


class AuthenticationFailure(FairexError):
    """Ciphertext does not authenticate under the given key."""


class MalformedKey(FairexError):
    """A signing or verify key is not well formed."""


# --- wire ---


class MalformedEncoding(FairexError):
    """Octets that were not produced by the canonical encoder."""


# --- chain ---


class NegativeBalance(FairexError):
    """Initial ledger contains a negative token count."""


class LedgerInvariantError(FairexError):
    """Token conservation was violated."""


# --- parties ---


class DuplicateSid(FairexError):
    """The notary was asked to certify an already used session id."""


class DuplicateBid(FairexError):
    """The buyer was asked to publish an already used offer id."""


# --- netsim ---


class PolicyViolation(FairexError):
    """An adversary policy attempted an action the network model forbids."""


class UnknownPolicy(FairexError):
    """No adversary policy is registered under the requested name."""


class StepBudgetExceeded(FairexError):
    """
    The run did not terminate within its step budget.

    Args:
        budget: The step budget that was exhausted
        transcript: The partial transcript produced so far
    """

    def __init__(self, budget: int, transcript: Any) -> None:
        super().__init__(f"Step budget of {budget} steps exhausted")
        self.budget = budget
        self.transcript = transcript


# --- ideal_ref ---


class InvalidEvent(FairexError):
    """An ideal event violates the ordering rules of the ideal functionality."""


class UnmappableTranscript(FairexError):
    """
    A real transcript reached a state the ideal functionality cannot express.

    Args:
        message: What could not be mapped
        step: Step index of the offending record, when known
    """

    def __init__(self, message: str, step: int | None = None) -> None:
        where = f" (step {step})" if step is not None else ""
        super().__init__(f"{message}{where}")
        self.step = step


# --- harness ---


class ConfigError(FairexError):
    """The simulator configuration file or environment is invalid."""


class ScenarioParseError(FairexError):
    """
    A scenario file is not valid YAML.

    Args:
        message: Parser message
        line: 1-based line of the problem, when the parser reports one
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        where = f" at line {line}" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line


@dataclass(frozen=True)
class ScenarioIssue:
    """One schema problem found in a scenario file."""

    location: str
    message: str
    line: int | None = None

    def __str__(self) -> str:
        where = f"line {self.line}: " if self.line is not None else ""
        return f"{where}{self.location}: {self.message}"


class ScenarioValidationError(FairexError):
    """
    A scenario file parsed but failed schema or referential validation.

    Args:
        issues: Every problem found, in document order
    """

    def __init__(self, issues: list[ScenarioIssue]) -> None:
        super().__init__("; ".join(str(issue) for issue in issues))
        self.issues = issues


class IgnoreReason(str, Enum):
    """Machine-readable reason a message was silently ignored."""

    # wire
    MALFORMED_ENCODING = "malformed-encoding"
    UNEXPECTED_MESSAGE = "unexpected-message"

    # chain
    OPEN_DUPLICATE_ID = "open-duplicate-id"
    OPEN_INSUFFICIENT_BALANCE = "open-insufficient-balance"
    OPEN_BAD_AMOUNT = "open-bad-amount"
    CLOSE_UNKNOWN_CONTRACT = "close-unknown-contract"
    CLOSE_ALREADY_CLOSED = "close-already-closed"
    CLOSE_HASH_MISMATCH = "close-hash-mismatch"

    # seller, step 2
    CERT_UNKNOWN_NOTARY = "cert-unknown-notary"
    CERT_BAD_SIGNATURE = "cert-bad-signature"
    CERT_CIPHERTEXT_HASH_MISMATCH = "cert-ciphertext-hash-mismatch"
    CERT_KEY_HASH_MISMATCH = "cert-key-hash-mismatch"
    CERT_PLAINTEXT_MISMATCH = "cert-plaintext-mismatch"
    CERT_DUPLICATE_SID = "cert-duplicate-sid"

    # seller, steps 4 and 5
    OFFER_DUPLICATE_BID = "offer-duplicate-bid"
    SELL_UNKNOWN_CERT = "sell-unknown-cert"
    SELL_UNKNOWN_OFFER = "sell-unknown-offer"
    SELL_CRITERION_MISMATCH = "sell-criterion-mismatch"
    SELL_CERT_COMMITTED = "sell-cert-committed"
    SELL_BID_COMMITTED = "sell-bid-committed"

    # buyer, step 6
    SELLING_UNKNOWN_OFFER = "selling-unknown-offer"
    SELLING_UNKNOWN_NOTARY = "selling-unknown-notary"
    SELLING_BAD_SIGNATURE = "selling-bad-signature"
    SELLING_CIPHERTEXT_HASH_MISMATCH = "selling-ciphertext-hash-mismatch"
    SELLING_CRITERION_MISMATCH = "selling-criterion-mismatch"
    SELLING_ALREADY_OPENED = "selling-already-opened"

    # seller, steps 8 and 11
    OPEN_NOT_PENDING = "open-not-pending"
    OPEN_TERMS_MISMATCH = "open-terms-mismatch"
    OPEN_ALREADY_ANSWERED = "open-already-answered"
    LEDGER_NO_PAYMENT = "ledger-no-payment"
    LEDGER_ALREADY_REPORTED = "ledger-already-reported"

    # buyer, step 10
    CLOSE_NOT_PENDING = "close-not-pending"
    CLOSE_KEY_MISMATCH = "close-key-mismatch"
    CLOSE_ALREADY_COMPLETE = "close-already-complete"
