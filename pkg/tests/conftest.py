"""
Pytest configuration file for the fair data exchange tests.
"""

import random
from pathlib import Path
from typing import Callable

import pytest

from fairex.criteria import AttributeSet, Criterion, InRange, MemberOf
from fairex.crypto_suite import SigKeyPair, gen_signing_keypair
from fairex.harness.scenario import Scenario, load_scenario
from fairex.parties import KeyDirectory, Notary
from fairex.wire import OfferId, SessionId

REPO_ROOT = Path(__file__).resolve().parent.parent
SCENARIOS_DIR = REPO_ROOT / "scenarios"
GOLDEN_DIR = Path(__file__).resolve().parent / "golden"


@pytest.fixture
def rng() -> random.Random:
    return random.Random("tests/crypto")


@pytest.fixture
def notary_keypair() -> SigKeyPair:
    return gen_signing_keypair(random.Random("tests/notary"))


@pytest.fixture
def directory(notary_keypair: SigKeyPair) -> KeyDirectory:
    keys = KeyDirectory()
    keys.register("notary", notary_keypair.verify_key, notary=True)
    return keys


@pytest.fixture
def notary(notary_keypair: SigKeyPair) -> Notary:
    return Notary("notary", notary_keypair)


@pytest.fixture
def sid() -> SessionId:
    return SessionId.from_label("notary", "cert-1")


@pytest.fixture
def bid() -> OfferId:
    return OfferId.from_label("buyer", "offer-1")


@pytest.fixture
def attributes() -> AttributeSet:
    return AttributeSet.of({"age": 34, "country": "NL", "smoker": False})


@pytest.fixture
def criterion() -> Criterion:
    return Criterion(
        (InRange("age", 18, 65), MemberOf.of("country", ["NL", "BE", "DE"]))
    )


@pytest.fixture
def plaintext() -> bytes:
    return b"patient record 4711: blood type A+"


@pytest.fixture
def scenario_file() -> Callable[[str], Path]:
    def resolve(name: str) -> Path:
        return SCENARIOS_DIR / f"{name}.yaml"

    return resolve


@pytest.fixture
def load() -> Callable[[str], Scenario]:
    """Load a bundled scenario by name."""

    def loader(name: str) -> Scenario:
        return load_scenario(SCENARIOS_DIR / f"{name}.yaml")

    return loader


@pytest.fixture
def honest(load: Callable[[str], Scenario]) -> Scenario:
    return load("honest")
