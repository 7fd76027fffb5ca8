"""
Seller attributes, buyer audience criteria, and the matching predicate f.

A criterion is a conjunction of atoms over named attributes. Values are
typed: ``1``, ``True`` and ``"1"`` are three different values, so matching
never relies on Python's bool/int equivalence.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass
from typing import Any, Union


AttrValue = Union[int, str, bool]

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

# Canonical ordering of value types: integers, then strings, then booleans
_TYPE_RANK = {int: 0, str: 1, bool: 2}


def value_key(value: AttrValue) -> tuple[int, Any]:
    """
    Type-aware sort and identity key of an attribute value.

    Args:
        value: An attribute value

    Returns:
        (type rank, value); two values are the same iff their keys are equal
    """
    return (_TYPE_RANK[type(value)], value)


def check_value(value: Any) -> AttrValue:
    """
    Validate an attribute value.

    Raises:
        ValueError: If the value is not a bool, a str, or a signed 64-bit int
    """
    if isinstance(value, bool) or isinstance(value, str):
        return value
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise ValueError(f"integer attribute {value} outside signed 64-bit range")
        return value
    raise ValueError(f"unsupported attribute value type: {type(value).__name__}")


def _check_name(name: Any) -> str:
    if not isinstance(name, str) or not name:
        raise ValueError("attribute names must be non-empty strings")
    return name


@dataclass(frozen=True, eq=False)
class AttributeSet:
    """
    Seller attribute set s, stored as name-sorted (name, value) pairs.

    Use ``AttributeSet.of(mapping)`` to build one from a plain dict.
    """

    entries: tuple[tuple[str, AttrValue], ...] = ()

    def __post_init__(self) -> None:
        names = [_check_name(name) for name, _ in self.entries]
        if names != sorted(set(names)):
            raise ValueError("attribute names must be unique and sorted")
        for _, value in self.entries:
            check_value(value)

    @classmethod
    def of(cls, values: Mapping[str, AttrValue]) -> AttributeSet:
        """Build from a mapping of attribute name to value."""
        return cls(tuple(sorted(values.items(), key=lambda item: item[0])))

    def get(self, name: str) -> AttrValue | None:
        for key, value in self.entries:
            if key == name:
                return value
        return None

    def __contains__(self, name: object) -> bool:
        return any(key == name for key, _ in self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> dict[str, AttrValue]:
        return dict(self.entries)

    def _identity(self) -> tuple[tuple[str, tuple[int, Any]], ...]:
        return tuple((name, value_key(value)) for name, value in self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, AttributeSet):
            return NotImplemented
        return self._identity() == other._identity()

    def __hash__(self) -> int:
        return hash(self._identity())


@dataclass(frozen=True, eq=False)
class Equals:
    """Attribute ``name`` is present and equal to ``value``."""

    name: str
    value: AttrValue

    def __post_init__(self) -> None:
        _check_name(self.name)
        check_value(self.value)

    def holds(self, attributes: AttributeSet) -> bool:
        actual = attributes.get(self.name)
        return actual is not None and value_key(actual) == value_key(self.value)

    def to_json(self) -> dict[str, Any]:
        return {"equals": {"name": self.name, "value": self.value}}

    def _identity(self) -> tuple[Any, ...]:
        return ("equals", self.name, value_key(self.value))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Equals):
            return NotImplemented
        return self._identity() == other._identity()

    def __hash__(self) -> int:
        return hash(self._identity())


@dataclass(frozen=True)
class InRange:
    """Attribute ``name`` is an integer with lo <= value <= hi."""

    name: str
    lo: int
    hi: int

    def __post_init__(self) -> None:
        _check_name(self.name)
        for bound in (self.lo, self.hi):
            if isinstance(bound, bool) or not isinstance(bound, int):
                raise ValueError("range bounds must be integers")
            check_value(bound)

    def holds(self, attributes: AttributeSet) -> bool:
        actual = attributes.get(self.name)
        if isinstance(actual, bool) or not isinstance(actual, int):
            return False
        return self.lo <= actual <= self.hi

    def to_json(self) -> dict[str, Any]:
        return {"in_range": {"name": self.name, "lo": self.lo, "hi": self.hi}}


@dataclass(frozen=True, eq=False)
class MemberOf:
    """
    Attribute ``name`` is present and one of ``values``.

    ``values`` is kept de-duplicated and in canonical order so that equal
    sets always encode to the same octets.
    """

    name: str
    values: tuple[AttrValue, ...]

    def __post_init__(self) -> None:
        _check_name(self.name)
        for value in self.values:
            check_value(value)
        keys = [value_key(value) for value in self.values]
        if keys != sorted(set(keys)):
            raise ValueError("member_of values must be unique and in canonical order")

    @classmethod
    def of(cls, name: str, values: Iterable[AttrValue]) -> MemberOf:
        """Build from any iterable, canonicalising order and duplicates."""
        unique = {value_key(check_value(value)): value for value in values}
        return cls(name, tuple(unique[key] for key in sorted(unique)))

    def holds(self, attributes: AttributeSet) -> bool:
        actual = attributes.get(self.name)
        if actual is None:
            return False
        wanted = value_key(actual)
        return any(value_key(value) == wanted for value in self.values)

    def to_json(self) -> dict[str, Any]:
        return {"member_of": {"name": self.name, "values": list(self.values)}}

    def _identity(self) -> tuple[Any, ...]:
        return ("member_of", self.name, tuple(value_key(v) for v in self.values))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MemberOf):
            return NotImplemented
        return self._identity() == other._identity()

    def __hash__(self) -> int:
        return hash(self._identity())


Atom = Union[Equals, InRange, MemberOf]


@dataclass(frozen=True)
class Criterion:
    """Buyer audience criterion b: the conjunction of ``atoms``, in order."""

    atoms: tuple[Atom, ...] = ()

    def to_json(self) -> list[dict[str, Any]]:
        return [atom.to_json() for atom in self.atoms]


def _atom_from_json(entry: Any) -> Atom:
    if not isinstance(entry, Mapping) or len(entry) != 1:
        raise ValueError("each criterion atom must be a mapping with exactly one key")
    ((kind, body),) = entry.items()
    if not isinstance(body, Mapping):
        raise ValueError(f"{kind} atom must be a mapping")
    expected = {
        "equals": {"name", "value"},
        "in_range": {"name", "lo", "hi"},
        "member_of": {"name", "values"},
    }.get(kind)
    if expected is None:
        raise ValueError(f"unknown criterion atom {kind!r}")
    if set(body) != expected:
        raise ValueError(f"{kind} atom needs exactly the keys {sorted(expected)}")

    if kind == "equals":
        return Equals(body["name"], body["value"])
    if kind == "in_range":
        return InRange(body["name"], body["lo"], body["hi"])
    if not isinstance(body["values"], list):
        raise ValueError("member_of values must be a list")
    return MemberOf.of(body["name"], body["values"])


def criterion_from_json(entries: Iterable[Any]) -> Criterion:
    """
    Build a criterion from its ``to_json`` form.

    Args:
        entries: Atoms such as ``{"in_range": {"name": "age", "lo": 18, "hi": 65}}``

    Raises:
        ValueError: On an unknown atom, missing keys, or an invalid value
    """
    return Criterion(tuple(_atom_from_json(entry) for entry in entries))


def eval_criterion(attributes: AttributeSet, criterion: Criterion) -> bool:
    """
    The audience predicate f(s, b).

    Args:
        attributes: Seller attribute set s
        criterion: Buyer criterion b

    Returns:
        True iff every atom holds over s. The empty conjunction holds;
        an atom naming a missing attribute does not.
    """
    return all(atom.holds(attributes) for atom in criterion.atoms)
