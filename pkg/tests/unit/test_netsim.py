import pytest

from fairex.chain import CHAIN_ID
from fairex.errors import PolicyViolation, StepBudgetExceeded
from fairex.harness.scenario import Scenario
from fairex.netsim import (
    RunState,
    conservation_holds,
    fairness_holds,
    hash_lock_sound,
    run,
    setup,
    simulate,
    step,
)
from fairex.policies import Action, Deliver, InjectPublic, ScriptedPolicy
from fairex.wire import MessageTag

pytestmark = pytest.mark.unit


def _scripted(honest: Scenario, *actions: Action) -> RunState:
    policy = ScriptedPolicy.from_actions(actions)
    rs = setup(honest, policy=policy)
    for _ in actions:
        step(rs)
    return rs


class TestHonestTrace:
    def test_message_order(self, honest: Scenario) -> None:
        transcript = run(honest)
        enqueued = [
            (r["msg_id"], r["sender"], r["receiver"], r["tag"])
            for r in transcript.of_type("enqueue")
        ]
        assert enqueued == [
            (0, "notary", "seller", "Cert"),
            (1, "buyer", "seller", "Buying"),
            (2, "seller", "buyer", "Selling"),
            (3, "buyer", CHAIN_ID, "ContractOpen"),
            (4, CHAIN_ID, "seller", "ContractOpen"),
            (5, CHAIN_ID, "buyer", "ContractOpen"),
            (6, "seller", CHAIN_ID, "ContractClose"),
            (7, CHAIN_ID, "seller", "ContractClose"),
            (8, CHAIN_ID, "buyer", "ContractClose"),
            (9, CHAIN_ID, "seller", "LedgerUpdate"),
            (10, CHAIN_ID, "buyer", "LedgerUpdate"),
        ]

    def test_outputs_and_steps(self, honest: Scenario) -> None:
        transcript = run(honest)
        outputs = [(r["step"], r["party"], r["kind"]) for r in transcript.outputs()]
        assert outputs == [
            (0, "seller", "CertReceived"),
            (1, "seller", "OfferReceived"),
            (8, "buyer", "Message"),
            (9, "seller", "PaymentReceived"),
        ]
        message = transcript.outputs()[2]
        assert bytes.fromhex(message["payload"]) == b"patient record 4711: blood type A+"

    def test_tape_and_final_state(self, honest: Scenario) -> None:
        transcript = run(honest)
        assert [(r["index"], r["tag"]) for r in transcript.of_type("chain")] == [
            (0, "ContractOpen"),
            (1, "ContractClose"),
            (2, "LedgerUpdate"),
        ]
        (final,) = transcript.of_type("final")
        assert final["step"] == 11
        assert final["owned"] == {"buyer": 0, "notary": 0, "seller": 1}
        (contract,) = final["contracts"]
        assert contract["status"] == "closed"
        assert contract["payee"] == "seller"

    def test_stale_tape_copies_are_ignored(self, honest: Scenario) -> None:
        ignored = [(r["step"], r["party"], r["reason"]) for r in run(honest).of_type("ignore")]
        assert ignored == [
            (5, "buyer", "unexpected-message"),
            (7, "seller", "unexpected-message"),
            (10, "buyer", "unexpected-message"),
        ]

    def test_header(self, honest: Scenario) -> None:
        header = run(honest).header
        assert header["scenario"] == "honest"
        assert header["seed"] == 1
        assert set(header["notary_keys"]) == {"notary"}


class TestDeterminism:
    def test_same_seed_same_transcript(self, honest: Scenario) -> None:
        assert run(honest).dumps() == run(honest).dumps()

    def test_seed_changes_keys(self, honest: Scenario) -> None:
        assert run(honest, 1).header["notary_keys"] != run(honest, 2).header["notary_keys"]


class TestPolicyViolations:
    def test_confidential_redirect(self, honest: Scenario) -> None:
        with pytest.raises(PolicyViolation):
            _scripted(honest, Deliver(0, "buyer"))

    def test_unknown_receiver(self, honest: Scenario) -> None:
        with pytest.raises(PolicyViolation):
            _scripted(honest, Deliver(1, "mallory"))

    def test_not_pending(self, honest: Scenario) -> None:
        with pytest.raises(PolicyViolation):
            _scripted(honest, Deliver(42))

    def test_inject_confidential_kind(self, honest: Scenario) -> None:
        with pytest.raises(PolicyViolation):
            _scripted(honest, InjectPublic(bytes([MessageTag.SELLING]), "buyer"))

    def test_public_redirect_is_allowed(self, honest: Scenario) -> None:
        rs = _scripted(honest, Deliver(1, CHAIN_ID))
        (ignore,) = rs.transcript.of_type("ignore")
        assert ignore["party"] == CHAIN_ID
        assert ignore["reason"] == "unexpected-message"

    def test_malformed_injection(self, honest: Scenario) -> None:
        rs = _scripted(honest, InjectPublic(b"\x7f\x00", "seller"))
        (ignore,) = rs.transcript.of_type("ignore")
        assert ignore["reason"] == "malformed-encoding"

    def test_injected_message_is_recorded_before_its_action(
        self, honest: Scenario
    ) -> None:
        rs = _scripted(honest, InjectPublic(b"\x7f\x00", "seller"))
        records = rs.transcript.records
        (enqueued,) = [
            i for i, r in enumerate(records)
            if r["type"] == "enqueue" and r["sender"] == "adversary"
        ]
        (acted,) = [
            i for i, r in enumerate(records)
            if r["type"] == "action" and r["action"] == "inject"
        ]
        assert enqueued < acted
        assert records[acted]["msg_id"] == records[enqueued]["msg_id"]

    def test_rejected_injection_is_still_recorded(self, honest: Scenario) -> None:
        close = bytes([MessageTag.CONTRACT_CLOSE])
        policy = ScriptedPolicy.from_actions([InjectPublic(close, "mallory")])
        rs = setup(honest, policy=policy)
        with pytest.raises(PolicyViolation):
            step(rs)
        (action,) = rs.transcript.actions()
        assert action["to"] == "mallory"
        assert "msg_id" not in action


class TestBudget:
    def test_budget_exhausted_keeps_partial_transcript(self, honest: Scenario) -> None:
        scenario = honest.model_copy(update={"step_budget": None})
        with pytest.raises(StepBudgetExceeded) as info:
            simulate(scenario, step_budget=3)
        assert info.value.budget == 3
        assert not info.value.transcript.of_type("final")
        assert len(info.value.transcript.actions()) == 3


class TestRunChecks:
    def test_hold_after_every_honest_step(self, honest: Scenario) -> None:
        checks: list[tuple[bool, bool, bool]] = []

        def observe(rs: RunState) -> None:
            checks.append((fairness_holds(rs), hash_lock_sound(rs), conservation_holds(rs)))

        simulate(honest, observer=observe)
        assert len(checks) == 12
        assert all(all(c) for c in checks)
