import pytest

from fairex.criteria import (
    AttributeSet,
    Criterion,
    Equals,
    InRange,
    MemberOf,
    criterion_from_json,
    eval_criterion,
)

pytestmark = pytest.mark.unit


@pytest.fixture
def person() -> AttributeSet:
    return AttributeSet.of({"age": 34, "country": "NL", "smoker": False})


class TestEvalCriterion:
    def test_empty_criterion_holds(self, person: AttributeSet) -> None:
        assert eval_criterion(person, Criterion(()))

    def test_all_atoms_must_hold(self, person: AttributeSet) -> None:
        both = Criterion((InRange("age", 18, 65), Equals("country", "NL")))
        assert eval_criterion(person, both)
        one_fails = Criterion((InRange("age", 18, 30), Equals("country", "NL")))
        assert not eval_criterion(person, one_fails)

    def test_missing_attribute_fails(self, person: AttributeSet) -> None:
        assert not eval_criterion(person, Criterion((Equals("income", 5),)))

    def test_range_bounds_inclusive(self, person: AttributeSet) -> None:
        assert InRange("age", 34, 34).holds(person)
        assert not InRange("age", 35, 40).holds(person)

    @pytest.mark.parametrize(("lo", "hi"), [(18, 65), (0, 0), (100, 100), (0, 100), (40, 30)])
    def test_range_matches_direct_comparison(self, lo: int, hi: int) -> None:
        criterion = Criterion((InRange("age", lo, hi),))
        for age in range(101):
            holds = eval_criterion(AttributeSet.of({"age": age}), criterion)
            assert holds == (lo <= age <= hi), age

    def test_range_on_non_integer_fails(self, person: AttributeSet) -> None:
        assert not InRange("country", 0, 10).holds(person)
        assert not InRange("smoker", 0, 1).holds(person)

    def test_bool_is_not_int(self) -> None:
        flags = AttributeSet.of({"flag": True})
        assert not Equals("flag", 1).holds(flags)
        assert Equals("flag", True).holds(flags)

    def test_member_of(self, person: AttributeSet) -> None:
        assert MemberOf.of("country", ["DE", "NL"]).holds(person)
        assert not MemberOf.of("country", ["DE", "BE"]).holds(person)
        assert not MemberOf.of("nationality", ["NL"]).holds(person)


class TestCanonicalForm:
    def test_member_of_sorted_and_deduplicated(self) -> None:
        atom = MemberOf.of("x", ["b", 2, True, "a", 2])
        assert atom.values == (2, "a", "b", True)

    def test_member_of_rejects_unsorted_tuple(self) -> None:
        with pytest.raises(ValueError):
            MemberOf("x", ("b", "a"))

    def test_attribute_set_equality_is_type_aware(self) -> None:
        assert AttributeSet.of({"a": 1}) != AttributeSet.of({"a": True})
        assert AttributeSet.of({"a": 1, "b": "x"}) == AttributeSet.of({"b": "x", "a": 1})

    def test_out_of_range_integer_rejected(self) -> None:
        with pytest.raises(ValueError):
            AttributeSet.of({"a": 2**63})


class TestCriterionJson:
    def test_from_json(self) -> None:
        criterion = criterion_from_json(
            [
                {"in_range": {"name": "age", "lo": 18, "hi": 65}},
                {"member_of": {"name": "country", "values": ["NL", "BE"]}},
                {"equals": {"name": "smoker", "value": False}},
            ]
        )
        assert criterion == Criterion(
            (
                InRange("age", 18, 65),
                MemberOf.of("country", ["BE", "NL"]),
                Equals("smoker", False),
            )
        )

    def test_to_json_is_accepted_back(self) -> None:
        original = Criterion((InRange("age", 1, 2), MemberOf.of("c", ["x"])))
        assert criterion_from_json(original.to_json()) == original

    @pytest.mark.parametrize(
        "entry",
        [
            {"between": {"name": "age"}},
            {"in_range": {"name": "age", "lo": 1}},
            {"equals": {"name": "a", "value": 1}, "in_range": {}},
            {"member_of": {"name": "a", "values": "NL"}},
            {"equals": {"name": "a", "value": 1.5}},
            "age > 3",
        ],
    )
    def test_rejects_malformed_atoms(self, entry: object) -> None:
        with pytest.raises(ValueError):
            criterion_from_json([entry])
