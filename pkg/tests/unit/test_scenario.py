from pathlib import Path
from typing import Callable

import pytest

from fairex.config import SimulatorConfig
from fairex.errors import ScenarioParseError, ScenarioValidationError
from fairex.harness.scenario import Scenario, load_scenario, parse_scenario
from fairex.parties import Role

pytestmark = pytest.mark.unit

BASE = """\
name: sample
seed: 3
parties:
  - {id: notary, role: notary}
  - {id: seller, role: seller}
  - {id: buyer, role: buyer, balance: 2}
certificates:
  - {sid: cert-1, seller: seller, message: hello, attributes: {age: 30}}
offers:
  - bid: offer-1
    buyer: buyer
    criterion:
      - in_range: {name: age, lo: 18, hi: 65}
sells:
  - {seller: seller, sid: cert-1, bid: offer-1}
"""


def _issues(text: str) -> list[str]:
    with pytest.raises(ScenarioValidationError) as info:
        parse_scenario(text)
    return [str(issue) for issue in info.value.issues]


class TestParse:
    def test_valid_document(self) -> None:
        scenario = parse_scenario(BASE)
        assert scenario.name == "sample"
        assert scenario.ids_with_role(Role.SELLER) == ["seller"]
        assert scenario.initial_balances() == {"notary": 0, "seller": 0, "buyer": 2}
        assert str(scenario.session_id(scenario.certificates[0])) == "notary/cert-1"
        assert scenario.certificates[0].plaintext() == b"hello"
        assert scenario.adversary.policy == "eager"

    def test_invalid_yaml_reports_line(self) -> None:
        with pytest.raises(ScenarioParseError) as info:
            parse_scenario("name: x\nseed: [1,\n")
        assert info.value.line is not None

    def test_not_a_mapping(self) -> None:
        with pytest.raises(ScenarioParseError):
            parse_scenario("- just\n- a list\n")

    def test_price_default_from_config(self) -> None:
        assert parse_scenario(BASE).effective_price() == 1
        config = SimulatorConfig(default_price=4)
        assert parse_scenario(BASE, config=config).price == 4
        priced = parse_scenario(BASE + "price: 2\n", config=config)
        assert priced.price == 2

    def test_message_hex(self) -> None:
        text = BASE.replace("message: hello", "message_hex: 00ff")
        assert parse_scenario(text).certificates[0].plaintext() == b"\x00\xff"


class TestValidation:
    def test_schema_issue_carries_line(self) -> None:
        (issue,) = _issues(BASE.replace("balance: 2", "balance: -2"))
        assert issue.startswith("line 6: parties.2.balance:")

    @pytest.mark.parametrize("reserved", ["chain", "adversary", "*", "a/b"])
    def test_reserved_and_bad_ids(self, reserved: str) -> None:
        issues = _issues(BASE.replace("{id: notary,", f"{{id: '{reserved}',"))
        assert any("parties.0.id" in issue for issue in issues)

    def test_unknown_references(self) -> None:
        text = BASE.replace(
            "- {seller: seller, sid: cert-1, bid: offer-1}",
            "- {seller: buyer, sid: cert-9, bid: offer-9}",
        )
        issues = _issues(text)
        assert len(issues) == 3
        assert any("sells.0.seller" in i and "not a seller" in i for i in issues)
        assert any("unknown certificate 'cert-9'" in i for i in issues)
        assert any("unknown offer 'offer-9'" in i for i in issues)

    def test_label_too_long(self) -> None:
        issues = _issues(BASE.replace("sid: cert-1,", "sid: certificate-1,"))
        assert any("certificates.0.sid" in i for i in issues)

    def test_both_message_forms(self) -> None:
        issues = _issues(BASE.replace("message: hello", "message: hello, message_hex: '00'"))
        assert any("exactly one of message and message_hex" in i for i in issues)

    def test_unknown_policy(self) -> None:
        issues = _issues(BASE + "adversary: {policy: polite}\n")
        assert any(i.startswith("line 16: adversary.policy") for i in issues)

    def test_bad_policy_params(self) -> None:
        issues = _issues(BASE + "adversary: {policy: drop-rate, params: {p: 3}}\n")
        assert any("adversary.params" in i for i in issues)

    def test_corruption_rules(self) -> None:
        buyer = _issues(BASE + "corruption: {party: buyer, behavior: withhold-key}\n")
        assert any("only a notary or a seller" in i for i in buyer)
        notary = _issues(BASE + "corruption: {party: notary, behavior: wrong-keys}\n")
        assert any("notary behaviors are" in i for i in notary)
        keys = _issues(
            BASE + "corruption: {party: seller, behavior: wrong-keys, params: {wrong_keys: -1}}\n"
        )
        assert any("wrong_keys" in i for i in keys)

    def test_several_notaries_need_explicit_notary(self) -> None:
        text = BASE.replace(
            "  - {id: seller, role: seller}",
            "  - {id: notary-2, role: notary}\n  - {id: seller, role: seller}",
        )
        assert any("notary is required" in i for i in _issues(text))

    def test_duplicates(self) -> None:
        text = BASE.replace(
            "  - {id: buyer, role: buyer, balance: 2}",
            "  - {id: buyer, role: buyer, balance: 2}\n  - {id: seller, role: seller}",
        )
        assert any("duplicate party id 'seller'" in i for i in _issues(text))

    def test_extra_fields_rejected(self) -> None:
        assert any("colour" in i for i in _issues(BASE + "colour: blue\n"))


class TestBundledScenarios:
    def test_every_bundled_scenario_loads(
        self, scenario_file: Callable[[str], Path]
    ) -> None:
        directory = scenario_file("honest").parent
        loaded = [load_scenario(path) for path in sorted(directory.glob("*.yaml"))]
        assert len(loaded) >= 17
        assert len({s.name for s in loaded}) == len(loaded)

    def test_header_fields(self, honest: Scenario) -> None:
        header = honest.header()
        assert header["scenario"] == "honest"
        assert header["price"] == 1
        assert header["corruption"] is None
        assert [p["id"] for p in header["parties"]] == ["notary", "seller", "buyer"]

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(FileNotFoundError):
            load_scenario(tmp_path / "absent.yaml")
