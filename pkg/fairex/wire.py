"""
Protocol messages and their canonical binary encoding.

Layout of every encoding: one tag octet, then the message fields in fixed
order. Variable-length fields carry an unsigned 32-bit big-endian length
prefix; keys, digests, signatures and nonces are fixed-width raw octets.
Integers are 64-bit big-endian (signed for attribute values, unsigned for
token amounts).

The codec is a bijection: ``decode`` accepts exactly the octet strings that
``encode`` produces and raises ``MalformedEncoding`` for everything else.
Signatures bind these octets, so there is exactly one representation of any
value.
"""

from __future__ import annotations

import struct
from collections.abc import Callable
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Union

from fairex.criteria import (
    Atom,
    AttributeSet,
    AttrValue,
    Criterion,
    Equals,
    InRange,
    MemberOf,
)
from fairex.crypto_suite import (
    DIGEST_LENGTH,
    KEY_LENGTH,
    NONCE_LENGTH,
    SIGNATURE_LENGTH,
    CertBody,
    Ciphertext,
    Digest,
    Signature,
    SymKey,
)
from fairex.errors import MalformedEncoding

SUFFIX_LENGTH = 8


class Channel(str, Enum):
    """How a message travels: sealed between two parties, or readable by all."""

    CONFIDENTIAL = "confidential"
    PUBLIC = "public"


class MessageTag(IntEnum):
    CERTIFY_INPUT = 0x01
    CERT = 0x02
    BUYING = 0x03
    SELLING = 0x04
    CONTRACT_OPEN = 0x05
    CONTRACT_CLOSE = 0x06
    LEDGER_UPDATE = 0x07
    CERT_BODY = 0x10


TAG_NAMES: dict[MessageTag, str] = {
    MessageTag.CERTIFY_INPUT: "CertifyInput",
    MessageTag.CERT: "Cert",
    MessageTag.BUYING: "Buying",
    MessageTag.SELLING: "Selling",
    MessageTag.CONTRACT_OPEN: "ContractOpen",
    MessageTag.CONTRACT_CLOSE: "ContractClose",
    MessageTag.LEDGER_UPDATE: "LedgerUpdate",
    MessageTag.CERT_BODY: "CertBody",
}

# Message kinds that only ever travel on confidential channels
CONFIDENTIAL_TAGS = frozenset(
    {
        MessageTag.CERTIFY_INPUT,
        MessageTag.CERT,
        MessageTag.SELLING,
        MessageTag.CERT_BODY,
    }
)


def _suffix_from_label(label: str) -> bytes:
    raw = label.encode("utf-8")
    if not raw or len(raw) > SUFFIX_LENGTH or b"\x00" in raw:
        raise ValueError(
            f"identifier label {label!r} must be 1-{SUFFIX_LENGTH} UTF-8 octets "
            "without NUL"
        )
    return raw.ljust(SUFFIX_LENGTH, b"\x00")


def _format_id(party: str, suffix: bytes) -> str:
    label = suffix.rstrip(b"\x00")
    try:
        text = label.decode("utf-8")
    except UnicodeDecodeError:
        text = ""
    # Anything that would not survive _parse_id falls back to hex
    if text and text.isprintable() and "/" not in text and not text.startswith("0x"):
        return f"{party}/{text}"
    return f"{party}/0x{suffix.hex()}"


def _parse_id(text: str) -> tuple[str, bytes]:
    party, sep, label = text.partition("/")
    if not sep or not party:
        raise ValueError(f"identifier {text!r} is not of the form party/label")
    if label.startswith("0x"):
        suffix = bytes.fromhex(label[2:])
        if len(suffix) != SUFFIX_LENGTH:
            raise ValueError(f"hex suffix of {text!r} must be {SUFFIX_LENGTH} octets")
        return party, suffix
    return party, _suffix_from_label(label)


def _check_id(party: str, suffix: bytes) -> None:
    if not party:
        raise ValueError("identifier party must be non-empty")
    if len(suffix) != SUFFIX_LENGTH:
        raise ValueError(f"identifier suffix must be {SUFFIX_LENGTH} octets")


@dataclass(frozen=True, order=True)
class SessionId:
    """Certificate id sid = (notary, suffix)."""

    notary_id: str
    suffix: bytes

    def __post_init__(self) -> None:
        _check_id(self.notary_id, self.suffix)

    @classmethod
    def from_label(cls, notary_id: str, label: str) -> SessionId:
        return cls(notary_id, _suffix_from_label(label))

    @classmethod
    def parse(cls, text: str) -> SessionId:
        return cls(*_parse_id(text))

    def __str__(self) -> str:
        return _format_id(self.notary_id, self.suffix)


@dataclass(frozen=True, order=True)
class OfferId:
    """Offer id bid = (buyer, suffix)."""

    buyer_id: str
    suffix: bytes

    def __post_init__(self) -> None:
        _check_id(self.buyer_id, self.suffix)

    @classmethod
    def from_label(cls, buyer_id: str, label: str) -> OfferId:
        return cls(buyer_id, _suffix_from_label(label))

    @classmethod
    def parse(cls, text: str) -> OfferId:
        return cls(*_parse_id(text))

    def __str__(self) -> str:
        return _format_id(self.buyer_id, self.suffix)


@dataclass(frozen=True)
class CertifyInput:
    """Environment input to the notary: certify M and s for a seller."""

    sid: SessionId
    seller_id: str
    plaintext: bytes
    attributes: AttributeSet

    tag = MessageTag.CERTIFY_INPUT


@dataclass(frozen=True)
class Cert:
    """Notary to seller: (sid, K, M, C, s, Y, X, sigma)."""

    sid: SessionId
    key: SymKey
    plaintext: bytes
    ciphertext: Ciphertext
    attributes: AttributeSet
    ciphertext_hash: Digest
    key_hash: Digest
    signature: Signature

    tag = MessageTag.CERT

    @property
    def body(self) -> CertBody:
        return CertBody(self.attributes, self.ciphertext_hash, self.key_hash)


@dataclass(frozen=True)
class Buying:
    """Buyer multicast: (bid, b)."""

    bid: OfferId
    criterion: Criterion

    tag = MessageTag.BUYING


@dataclass(frozen=True)
class Selling:
    """Seller to buyer: (bid, notary, C, s, Y, X, sigma)."""

    bid: OfferId
    notary_id: str
    ciphertext: Ciphertext
    attributes: AttributeSet
    ciphertext_hash: Digest
    key_hash: Digest
    signature: Signature

    tag = MessageTag.SELLING

    @property
    def body(self) -> CertBody:
        return CertBody(self.attributes, self.ciphertext_hash, self.key_hash)


@dataclass(frozen=True)
class ContractOpen:
    """'Pay ``amount`` if x : H(x) = condition' under contract id ``bid``."""

    bid: OfferId
    condition: Digest
    amount: int

    tag = MessageTag.CONTRACT_OPEN

    def __post_init__(self) -> None:
        if isinstance(self.amount, bool) or not 0 <= self.amount < 2**64:
            raise ValueError("contract amount must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class ContractClose:
    """Reveal K to settle contract ``bid``."""

    bid: OfferId
    key: SymKey

    tag = MessageTag.CONTRACT_CLOSE


@dataclass(frozen=True)
class LedgerUpdate:
    """Chain notice that contract ``bid`` paid ``amount`` to ``payee``."""

    bid: OfferId
    payee: str
    amount: int
    balances: tuple[tuple[str, int], ...]

    tag = MessageTag.LEDGER_UPDATE

    def __post_init__(self) -> None:
        parties = [party for party, _ in self.balances]
        if parties != sorted(set(parties)):
            raise ValueError("ledger snapshot must list each party once, sorted")
        if not self.payee:
            raise ValueError("payee must be non-empty")


Message = Union[
    CertifyInput, Cert, Buying, Selling, ContractOpen, ContractClose, LedgerUpdate
]


# --- encoding ---


class _Writer:
    def __init__(self, tag: MessageTag) -> None:
        self._out = bytearray([tag])

    def raw(self, data: bytes) -> None:
        self._out += data

    def var(self, data: bytes) -> None:
        self._out += struct.pack(">I", len(data))
        self._out += data

    def text(self, value: str) -> None:
        self.var(value.encode("utf-8"))

    def u32(self, value: int) -> None:
        self._out += struct.pack(">I", value)

    def u64(self, value: int) -> None:
        self._out += struct.pack(">Q", value)

    def i64(self, value: int) -> None:
        self._out += struct.pack(">q", value)

    def party_id(self, party: str, suffix: bytes) -> None:
        self.text(party)
        self.raw(suffix)

    def ciphertext(self, c: Ciphertext) -> None:
        self.raw(c.nonce)
        self.var(c.body)

    def value(self, value: AttrValue) -> None:
        if isinstance(value, bool):
            self.raw(b"\x03" + (b"\x01" if value else b"\x00"))
        elif isinstance(value, int):
            self.raw(b"\x01")
            self.i64(value)
        else:
            self.raw(b"\x02")
            self.text(value)

    def attributes(self, s: AttributeSet) -> None:
        self.u32(len(s.entries))
        for name, value in s.entries:
            self.text(name)
            self.value(value)

    def criterion(self, b: Criterion) -> None:
        self.u32(len(b.atoms))
        for atom in b.atoms:
            if isinstance(atom, Equals):
                self.raw(b"\x01")
                self.text(atom.name)
                self.value(atom.value)
            elif isinstance(atom, InRange):
                self.raw(b"\x02")
                self.text(atom.name)
                self.i64(atom.lo)
                self.i64(atom.hi)
            else:
                self.raw(b"\x03")
                self.text(atom.name)
                self.u32(len(atom.values))
                for value in atom.values:
                    self.value(value)

    def getvalue(self) -> bytes:
        return bytes(self._out)


def encode(message: Message | CertBody) -> bytes:
    """
    Canonical encoding of a message.

    Args:
        message: Any protocol message, or the CertBody the notary signs

    Returns:
        Deterministic octets; equal messages encode identically
    """
    if isinstance(message, CertBody):
        w = _Writer(MessageTag.CERT_BODY)
        w.attributes(message.attributes)
        w.raw(message.ciphertext_hash.raw)
        w.raw(message.key_hash.raw)
        return w.getvalue()

    w = _Writer(message.tag)
    if isinstance(message, CertifyInput):
        w.party_id(message.sid.notary_id, message.sid.suffix)
        w.text(message.seller_id)
        w.var(message.plaintext)
        w.attributes(message.attributes)
    elif isinstance(message, Cert):
        w.party_id(message.sid.notary_id, message.sid.suffix)
        w.raw(message.key.raw)
        w.var(message.plaintext)
        w.ciphertext(message.ciphertext)
        w.attributes(message.attributes)
        w.raw(message.ciphertext_hash.raw)
        w.raw(message.key_hash.raw)
        w.raw(message.signature.raw)
    elif isinstance(message, Buying):
        w.party_id(message.bid.buyer_id, message.bid.suffix)
        w.criterion(message.criterion)
    elif isinstance(message, Selling):
        w.party_id(message.bid.buyer_id, message.bid.suffix)
        w.text(message.notary_id)
        w.ciphertext(message.ciphertext)
        w.attributes(message.attributes)
        w.raw(message.ciphertext_hash.raw)
        w.raw(message.key_hash.raw)
        w.raw(message.signature.raw)
    elif isinstance(message, ContractOpen):
        w.party_id(message.bid.buyer_id, message.bid.suffix)
        w.raw(message.condition.raw)
        w.u64(message.amount)
    elif isinstance(message, ContractClose):
        w.party_id(message.bid.buyer_id, message.bid.suffix)
        w.raw(message.key.raw)
    elif isinstance(message, LedgerUpdate):
        w.party_id(message.bid.buyer_id, message.bid.suffix)
        w.text(message.payee)
        w.u64(message.amount)
        w.u32(len(message.balances))
        for party, count in message.balances:
            w.text(party)
            w.u64(count)
    else:
        raise TypeError(f"not a protocol message: {type(message).__name__}")
    return w.getvalue()


def encode_cert_body(
    attributes: AttributeSet, ciphertext_hash: Digest, key_hash: Digest
) -> bytes:
    """The exact octets a notary signs and every verifier checks."""
    return encode(CertBody(attributes, ciphertext_hash, key_hash))


# --- decoding ---


class _Reader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0

    def raw(self, n: int) -> bytes:
        end = self._pos + n
        if end > len(self._data):
            raise MalformedEncoding("truncated encoding")
        chunk = self._data[self._pos : end]
        self._pos = end
        return chunk

    def u32(self) -> int:
        return int(struct.unpack(">I", self.raw(4))[0])

    def u64(self) -> int:
        return int(struct.unpack(">Q", self.raw(8))[0])

    def i64(self) -> int:
        return int(struct.unpack(">q", self.raw(8))[0])

    def var(self) -> bytes:
        return self.raw(self.u32())

    def text(self) -> str:
        return self.var().decode("utf-8")

    def session_id(self) -> SessionId:
        party = self.text()
        return SessionId(party, self.raw(SUFFIX_LENGTH))

    def offer_id(self) -> OfferId:
        party = self.text()
        return OfferId(party, self.raw(SUFFIX_LENGTH))

    def digest(self) -> Digest:
        return Digest(self.raw(DIGEST_LENGTH))

    def key(self) -> SymKey:
        return SymKey(self.raw(KEY_LENGTH))

    def signature(self) -> Signature:
        return Signature(self.raw(SIGNATURE_LENGTH))

    def ciphertext(self) -> Ciphertext:
        nonce = self.raw(NONCE_LENGTH)
        return Ciphertext(nonce=nonce, body=self.var())

    def value(self) -> AttrValue:
        kind = self.raw(1)[0]
        if kind == 0x01:
            return self.i64()
        if kind == 0x02:
            return self.text()
        if kind == 0x03:
            flag = self.raw(1)[0]
            if flag not in (0, 1):
                raise MalformedEncoding("boolean octet must be 0 or 1")
            return flag == 1
        raise MalformedEncoding(f"unknown value kind {kind:#04x}")

    def attributes(self) -> AttributeSet:
        count = self.u32()
        return AttributeSet(tuple((self.text(), self.value()) for _ in range(count)))

    def criterion(self) -> Criterion:
        atoms: list[Atom] = []
        for _ in range(self.u32()):
            kind = self.raw(1)[0]
            name = self.text()
            if kind == 0x01:
                atoms.append(Equals(name, self.value()))
            elif kind == 0x02:
                lo = self.i64()
                atoms.append(InRange(name, lo, self.i64()))
            elif kind == 0x03:
                count = self.u32()
                atoms.append(MemberOf(name, tuple(self.value() for _ in range(count))))
            else:
                raise MalformedEncoding(f"unknown criterion atom {kind:#04x}")
        return Criterion(tuple(atoms))

    def finish(self) -> None:
        if self._pos != len(self._data):
            raise MalformedEncoding(
                f"{len(self._data) - self._pos} trailing octets after message"
            )


def _decode_certify_input(r: _Reader) -> CertifyInput:
    return CertifyInput(r.session_id(), r.text(), r.var(), r.attributes())


def _decode_cert(r: _Reader) -> Cert:
    return Cert(
        sid=r.session_id(),
        key=r.key(),
        plaintext=r.var(),
        ciphertext=r.ciphertext(),
        attributes=r.attributes(),
        ciphertext_hash=r.digest(),
        key_hash=r.digest(),
        signature=r.signature(),
    )


def _decode_buying(r: _Reader) -> Buying:
    return Buying(r.offer_id(), r.criterion())


def _decode_selling(r: _Reader) -> Selling:
    return Selling(
        bid=r.offer_id(),
        notary_id=r.text(),
        ciphertext=r.ciphertext(),
        attributes=r.attributes(),
        ciphertext_hash=r.digest(),
        key_hash=r.digest(),
        signature=r.signature(),
    )


def _decode_contract_open(r: _Reader) -> ContractOpen:
    return ContractOpen(r.offer_id(), r.digest(), r.u64())


def _decode_contract_close(r: _Reader) -> ContractClose:
    return ContractClose(r.offer_id(), r.key())


def _decode_ledger_update(r: _Reader) -> LedgerUpdate:
    bid = r.offer_id()
    payee = r.text()
    amount = r.u64()
    balances = tuple((r.text(), r.u64()) for _ in range(r.u32()))
    return LedgerUpdate(bid, payee, amount, balances)


def _decode_cert_body(r: _Reader) -> CertBody:
    return CertBody(r.attributes(), r.digest(), r.digest())


_DECODERS: dict[int, Callable[[_Reader], Message | CertBody]] = {
    MessageTag.CERTIFY_INPUT: _decode_certify_input,
    MessageTag.CERT: _decode_cert,
    MessageTag.BUYING: _decode_buying,
    MessageTag.SELLING: _decode_selling,
    MessageTag.CONTRACT_OPEN: _decode_contract_open,
    MessageTag.CONTRACT_CLOSE: _decode_contract_close,
    MessageTag.LEDGER_UPDATE: _decode_ledger_update,
    MessageTag.CERT_BODY: _decode_cert_body,
}


def decode_any(data: bytes) -> Message | CertBody:
    """
    Decode a message or a CertBody.

    Raises:
        MalformedEncoding: If ``data`` is empty, truncated, carries trailing
            octets, an unknown tag, or any non-canonical field
    """
    if not data:
        raise MalformedEncoding("empty encoding")
    decoder = _DECODERS.get(data[0])
    if decoder is None:
        raise MalformedEncoding(f"unknown message tag {data[0]:#04x}")
    reader = _Reader(data[1:])
    try:
        message = decoder(reader)
    except (ValueError, UnicodeDecodeError) as e:
        raise MalformedEncoding(f"non-canonical field: {e}") from e
    reader.finish()
    return message


def decode(data: bytes) -> Message:
    """
    Decode a protocol message.

    Raises:
        MalformedEncoding: As ``decode_any``, and for a bare CertBody, which is
            signed material and never travels on its own
    """
    message = decode_any(data)
    if isinstance(message, CertBody):
        raise MalformedEncoding("CertBody is not a protocol message")
    return message


def peek_tag(data: bytes) -> MessageTag | None:
    """Tag of an encoding without decoding its body; None if unknown."""
    if not data:
        return None
    try:
        return MessageTag(data[0])
    except ValueError:
        return None


def tag_name(tag: MessageTag | None) -> str:
    return TAG_NAMES[tag] if tag is not None else "Unknown"
