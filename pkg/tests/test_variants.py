import json
import random
import sys

import pytest
from hypothesis import given
from hypothesis import strategies as st

from contamkit.metrics import gestalt_ratio
from contamkit.variants import (
    AmbiguousPlanError,
    CategorySubstitution,
    ChainOrderError,
    Clue,
    DuplicateVariant,
    PlanError,
    PuzzleDocument,
    PuzzleParseError,
    SubstitutionPlan,
    apply_substitution_plan,
    build_transform_prompt,
    map_solution,
    parse_puzzle,
    plan_from_dict,
    render_puzzle,
    run_solution_hook,
    shuffle_clues,
    validate_chain,
    validate_variant,
    variant_from_row,
)

PUZZLE = """There are 3 houses.
Categories: Color (Red, Green, Blue).

1. The Red house is first.
2. The Green house is next to the Blue house.
3. The Blue house is not second.

Find the unique solution."""


def make_plan():
    return SubstitutionPlan(
        categories={
            "Color": CategorySubstitution(
                new_category="Shape",
                values={"Red": "Square", "Green": "Circle", "Blue": "Triangle"},
            )
        }
    )


class TestParseRender:
    def test_round_trip(self):
        assert render_puzzle(parse_puzzle(PUZZLE)) == PUZZLE

    def test_sections(self):
        doc = parse_puzzle(PUZZLE)
        assert doc.preamble[-1] == ""
        assert len(doc.clues) == 3
        assert doc.clues[0].text == "The Red house is first."
        assert doc.trailer == ("", "Find the unique solution.")

    def test_format_details_round_trip(self):
        text = "intro\n  1)  alpha\n  2)\tbeta\n3. gamma\nend"
        doc = parse_puzzle(text)
        assert render_puzzle(doc) == text
        assert doc.clues[0].lead == "  " and doc.clues[0].sep == ")"
        assert doc.clues[1].gap == "\t"
        assert doc.clues[2].lead == "" and doc.clues[2].sep == "."

    def test_block_ends_at_first_non_clue_line(self):
        text = "1. a\n2. b\nplain text\n3. c"
        doc = parse_puzzle(text)
        assert len(doc.clues) == 2
        assert doc.trailer == ("plain text", "3. c")
        assert render_puzzle(doc) == text

    def test_no_clues(self):
        with pytest.raises(PuzzleParseError, match="no numbered clue list"):
            parse_puzzle("just prose\nno list here")

    def test_non_sequential_numbers(self):
        with pytest.raises(PuzzleParseError, match="not sequential"):
            parse_puzzle("1. a\n3. b")

    def test_must_start_at_one(self):
        with pytest.raises(PuzzleParseError, match="not sequential"):
            parse_puzzle("2. a\n3. b")


class TestShuffle:
    def test_preserves_clue_multiset_and_renumbers(self):
        doc = parse_puzzle(PUZZLE)
        shuffled = shuffle_clues(doc, random.Random(0))
        assert sorted(c.text for c in shuffled.clues) == sorted(c.text for c in doc.clues)
        assert [c.number for c in shuffled.clues] == [1, 2, 3]
        assert shuffled.preamble == doc.preamble and shuffled.trailer == doc.trailer

    def test_formatting_stays_with_positions(self):
        text = "x\n  1)  aaa\n2. bbb\n3. ccc"
        shuffled = shuffle_clues(parse_puzzle(text), random.Random(1))
        assert shuffled.clues[0].lead == "  " and shuffled.clues[0].sep == ")"
        assert shuffled.clues[1].sep == "."

    def test_deterministic_per_seed(self):
        doc = parse_puzzle(PUZZLE)
        a = shuffle_clues(doc, random.Random(7))
        b = shuffle_clues(doc, random.Random(7))
        assert render_puzzle(a) == render_puzzle(b)

    def test_renders_as_valid_puzzle(self):
        doc = parse_puzzle(PUZZLE)
        rendered = render_puzzle(shuffle_clues(doc, random.Random(3)))
        assert len(parse_puzzle(rendered).clues) == 3


class TestSubstitutionPlan:
    def test_replacement_map(self):
        assert make_plan().replacement_map() == {
            "Color": "Shape",
            "Red": "Square",
            "Green": "Circle",
            "Blue": "Triangle",
        }

    def test_repeated_targets_rejected(self):
        with pytest.raises(PlanError, match="not injective"):
            SubstitutionPlan(
                categories={
                    "Color": CategorySubstitution("Shape", {"Red": "X", "Green": "X"})
                }
            )

    def test_target_equal_to_a_source_rejected(self):
        with pytest.raises(PlanError, match="collide"):
            SubstitutionPlan(
                categories={
                    "Color": CategorySubstitution("Shape", {"Red": "Green", "Green": "Lime"})
                }
            )

    def test_inverse_round_trips_text(self):
        plan = make_plan()
        substituted = apply_substitution_plan(PUZZLE, plan)
        assert "Square house" in substituted and "Color" not in substituted
        assert apply_substitution_plan(substituted, plan.inverse()) == PUZZLE

    def test_dict_round_trip(self):
        plan = make_plan()
        doc = plan.to_dict()
        assert "substitution_plan" in doc
        assert plan_from_dict(doc) == plan
        assert plan_from_dict(doc["substitution_plan"]) == plan

    def test_inverse_of_inverse(self):
        plan = make_plan()
        assert plan.inverse().inverse() == plan


class TestApplySubstitution:
    def test_whole_word_only(self):
        plan = SubstitutionPlan(
            categories={"Color": CategorySubstitution("Shape", {"Red": "Square"})}
        )
        assert apply_substitution_plan("Red and Redder.", plan) == "Square and Redder."

    def test_longest_key_wins(self):
        mapping = SubstitutionPlan(
            categories={
                "Pet": CategorySubstitution(
                    "Book", {"Golden Retriever": "Atlas", "Golden": "Novel"}
                )
            }
        )
        out = apply_substitution_plan("A Golden Retriever and a Golden coin.", mapping)
        assert out == "A Atlas and a Novel coin."

    def test_shorter_key_fallback_at_same_position(self):
        plan = SubstitutionPlan(
            categories={
                "Item": CategorySubstitution("Tool", {"red pens": "blue ink", "red": "green"})
            }
        )
        assert apply_substitution_plan("red pencils", plan) == "green pencils"
        assert apply_substitution_plan("red pens here", plan) == "blue ink here"

    def test_ambiguous_when_target_present(self):
        with pytest.raises(AmbiguousPlanError, match="Square"):
            apply_substitution_plan("Red next to a Square.", make_plan())

    def test_target_inside_longer_word_is_fine(self):
        out = apply_substitution_plan("Red next to Squares.", make_plan())
        assert out == "Square next to Squares."

    def test_map_solution_nested(self):
        solution = {
            "Color": {"house1": "Red", "house2": "Green"},
            "order": ["Red", "Green", "Blue"],
            "size": 3,
        }
        assert map_solution(solution, make_plan()) == {
            "Shape": {"house1": "Square", "house2": "Circle"},
            "order": ["Square", "Circle", "Triangle"],
            "size": 3,
        }

    def test_map_solution_preserves_tuples(self):
        assert map_solution(("Red", ["Blue"]), make_plan()) == ("Square", ["Triangle"])


class TestChainRules:
    def test_valid_chains(self):
        assert validate_chain(["shuffle"]) == ("shuffle",)
        assert validate_chain(["shuffle", "substitute", "paraphrase"]) == (
            "shuffle",
            "substitute",
            "paraphrase",
        )
        assert validate_chain(["substitute", "paraphrase"]) == ("substitute", "paraphrase")

    def test_out_of_order_rejected(self):
        with pytest.raises(ChainOrderError):
            validate_chain(["substitute", "shuffle"])
        with pytest.raises(ChainOrderError):
            validate_chain(["paraphrase", "substitute"])

    def test_repeats_rejected(self):
        with pytest.raises(ChainOrderError):
            validate_chain(["shuffle", "shuffle"])

    def test_unknown_transform(self):
        with pytest.raises(ChainOrderError, match="polish"):
            validate_chain(["polish"])

    def test_variant_row_round_trip(self):
        variant = DuplicateVariant(original_id="p1", chain=("shuffle",), text="1. a")
        assert variant_from_row(variant.to_row()) == variant

    def test_variant_validates_chain(self):
        with pytest.raises(ChainOrderError):
            DuplicateVariant(original_id="p1", chain=("paraphrase", "shuffle"), text="x")


class TestTransformPrompts:
    def test_paraphrase_prompt(self):
        doc = build_transform_prompt("paraphrase", PUZZLE)
        assert doc["kind"] == "paraphrase"
        assert PUZZLE in doc["user"]
        assert "expert editor" in doc["system"]

    def test_prompt_slots_are_single_pass(self):
        tricky = "1. A clue mentioning {solution_json} literally."
        doc = build_transform_prompt("paraphrase", tricky)
        assert "{solution_json}" in doc["user"]

    def test_plan_prompt_requires_solution(self):
        with pytest.raises(ValueError, match="solution"):
            build_transform_prompt("substitution-plan", PUZZLE)
        doc = build_transform_prompt("substitution-plan", PUZZLE, solution={"Color": "Red"})
        assert '{"Color": "Red"}' in doc["user"]
        # the JSON output schema in the template keeps its literal braces
        assert '"substitution_plan"' in doc["user"]
        assert '"new_category"' in doc["user"]

    def test_apply_prompt_requires_plan(self):
        with pytest.raises(ValueError, match="plan"):
            build_transform_prompt("substitution-apply", PUZZLE)
        doc = build_transform_prompt("substitution-apply", PUZZLE, plan=make_plan())
        assert '"Red": "Square"' in doc["user"]

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            build_transform_prompt("reword", PUZZLE)


class TestValidateVariant:
    def test_accepts_clean_shuffle(self):
        doc = parse_puzzle(PUZZLE)
        variant = render_puzzle(shuffle_clues(doc, random.Random(2)))
        outcome = validate_variant(
            variant,
            PUZZLE,
            chain=("shuffle",),
            original_solution={"x": 1},
            variant_solution={"x": 1},
            max_gestalt=2.0,
        )
        assert outcome.accepted and outcome.reasons == []
        assert outcome.metrics is not None

    def test_rejects_identical_text(self):
        outcome = validate_variant(PUZZLE, PUZZLE)
        assert not outcome.accepted
        assert any("gestalt vs original" in r for r in outcome.reasons)
        assert outcome.metrics.exact

    def test_rejects_near_copy_of_sibling(self):
        distinct = "totally different prose\n1. unrelated clue\n2. another clue"
        outcome = validate_variant(distinct, PUZZLE, sibling_texts=[PUZZLE, distinct])
        assert not outcome.accepted
        assert any("sibling 1" in r for r in outcome.reasons)

    def test_rejects_dropped_clue(self):
        variant = "There are 3 houses.\n1. The Red house is first.\n2. The Blue house is not second."
        outcome = validate_variant(variant, PUZZLE, chain=("shuffle",), max_gestalt=2.0)
        assert not outcome.accepted
        assert "clue multiset changed under transform" in outcome.reasons

    def test_substitution_checked_under_inverse_plan(self):
        plan = make_plan()
        variant = apply_substitution_plan(PUZZLE, plan)
        good = validate_variant(
            variant,
            PUZZLE,
            chain=("substitute",),
            plan=plan,
            original_solution={"Color": "Red"},
            variant_solution={"Shape": "Square"},
            max_gestalt=2.0,
        )
        assert good.accepted, good.reasons

    def test_substitution_without_plan(self):
        outcome = validate_variant("1. x", "1. y", chain=("substitute",), max_gestalt=2.0)
        assert "substitution chain without a plan" in outcome.reasons

    def test_solution_must_map_through_plan(self):
        plan = make_plan()
        variant = apply_substitution_plan(PUZZLE, plan)
        outcome = validate_variant(
            variant,
            PUZZLE,
            chain=("substitute",),
            plan=plan,
            original_solution={"Color": "Red"},
            variant_solution={"Color": "Red"},
            max_gestalt=2.0,
        )
        assert "solution does not map through the plan" in outcome.reasons

    def test_shuffle_must_not_touch_solution(self):
        doc = parse_puzzle(PUZZLE)
        variant = render_puzzle(shuffle_clues(doc, random.Random(2)))
        outcome = validate_variant(
            variant,
            PUZZLE,
            chain=("shuffle",),
            original_solution={"x": 1},
            variant_solution={"x": 2},
            max_gestalt=2.0,
        )
        assert "solution changed by a solution-preserving transform" in outcome.reasons

    def test_paraphrase_skips_structural_check(self):
        outcome = validate_variant(
            "A fresh statement.\n1. Something new.", PUZZLE, chain=("paraphrase",)
        )
        assert outcome.accepted, outcome.reasons

    def test_unparseable_variant_fails_structural_check(self):
        outcome = validate_variant("no clues at all", PUZZLE, chain=("shuffle",), max_gestalt=2.0)
        assert any("structural check failed" in r for r in outcome.reasons)


@given(st.integers(min_value=0, max_value=10_000))
def test_shuffle_round_trip_properties(seed):
    doc = parse_puzzle(PUZZLE)
    shuffled = shuffle_clues(doc, random.Random(seed))
    rendered = render_puzzle(shuffled)
    reparsed = parse_puzzle(rendered)
    assert sorted(c.text for c in reparsed.clues) == sorted(c.text for c in doc.clues)
    assert [c.number for c in reparsed.clues] == [1, 2, 3]


class TestSolutionHook:
    def test_pass_and_fail(self):
        record = {"x": 1}
        ok = run_solution_hook(
            [sys.executable, "-c", "import json,sys; sys.exit(0 if json.load(sys.stdin)['x'] == 1 else 1)"],
            record,
        )
        assert ok is True
        bad = run_solution_hook(
            [sys.executable, "-c", "import sys; sys.exit(3)"],
            record,
        )
        assert bad is False
