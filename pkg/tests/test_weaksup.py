import pytest
from pathlib import Path

from hiddenemo.datamodel import DatasetManifest, Label, SampleRecord, ValidationError
from hiddenemo.weaksup import (
    DEFAULT_RULES,
    MARKERS,
    ParseError,
    PriorRuleSet,
    PseudoLabel,
    VlmResponse,
    build_prompt,
    format_response,
    merge_datasets,
    parse_response,
    parse_response_text,
    select_pseudo_label,
    simulate_pseudo_labels,
    write_response,
)

GOOD = """[ACTION_UNITS]
AU12 lip corner puller around 0:14
[EVIDENCE_WIN]
- relaxed shoulders
- smiling while answering
[EVIDENCE_LOSS]
- brief frown
[REFLECTION]
Face touching discounted.
[CONFIDENCE]
win: 0.7
loss: 0.3
"""


def _resp(w, l, sid="x"):
    return VlmResponse(sid, "", [], [], w, l)


def test_prompt_markers_in_order():
    p = build_prompt()
    positions = [p.index(m) for m in MARKERS.values()]
    assert positions == sorted(positions)
    assert DEFAULT_RULES.rules[0] in p


def test_prompt_rule_version_isolation():
    a = build_prompt(PriorRuleSet(("Rule A text.",), "a"))
    b = build_prompt(PriorRuleSet(("Rule B text.",), "b"))
    assert "Rule A text." in a and "Rule A text." not in b
    assert a == build_prompt(PriorRuleSet(("Rule A text.",), "a"))
    with pytest.raises(ValidationError):
        PriorRuleSet(())


def test_parse_example():
    r = parse_response_text(GOOD, "s1")
    assert (r.confidence_win, r.confidence_loss) == (0.7, 0.3)
    assert r.evidence_win == ["relaxed shoulders", "smiling while answering"]
    assert r.evidence_loss == ["brief frown"]
    assert r.sample_id == "s1"


def test_parse_out_of_range():
    with pytest.raises(ParseError) as e:
        parse_response_text(GOOD.replace("win: 0.7", "win: 1.4"))
    assert e.value.field == "confidence_win"


def test_parse_missing_confidence():
    with pytest.raises(ParseError) as e:
        parse_response_text(GOOD.replace("loss: 0.3\n", ""))
    assert e.value.field == "confidence_loss"


def test_parse_missing_section():
    with pytest.raises(ParseError) as e:
        parse_response_text(GOOD.replace("[REFLECTION]\n", ""))
    assert e.value.field == "REFLECTION"


def test_parse_file_uses_stem(tmp_path):
    (tmp_path / "clip7.txt").write_text(GOOD)
    assert parse_response(tmp_path / "clip7.txt").sample_id == "clip7"


def test_format_round_trip(tmp_path):
    r = parse_response_text(GOOD, "s9")
    write_response(r, tmp_path / "r.txt")
    again = parse_response(tmp_path / "r.txt")
    for name in ("sample_id", "action_units_text", "evidence_win", "evidence_loss", "confidence_win",
                 "confidence_loss", "reflection_text"):
        assert getattr(again, name) == getattr(r, name)
    assert format_response(again) == format_response(r)


def test_select_examples():
    p = select_pseudo_label(_resp(0.7, 0.3))
    assert p.label is Label.WIN and p.margin == pytest.approx(0.4) and not p.excluded
    assert select_pseudo_label(_resp(0.2, 0.6)).label is Label.LOSS
    assert select_pseudo_label(_resp(0.5, 0.5)).excluded
    assert select_pseudo_label(_resp(0.55, 0.5), exclusion_threshold=0.1).excluded


def test_select_scale_invariant():
    for w, l in ((0.7, 0.3), (0.1, 0.4), (0.9, 0.89)):
        assert select_pseudo_label(_resp(w, l)).label is select_pseudo_label(_resp(w / 2, l / 2)).label


def _manifest(prefix, n, label=Label.WIN):
    return DatasetManifest([SampleRecord(f"{prefix}{i}", Path("k"), Path("v"), Path("t"), label, "gold", 10)
                            for i in range(n)], "train")


def test_merge_counts():
    gold = _manifest("g", 32)
    pool = _manifest("p", 20, label=None)
    pseudo = [PseudoLabel(f"p{i}", Label.LOSS, 0.0 if i < 2 else 0.5, excluded=i < 2) for i in range(20)]
    merged = merge_datasets(gold, pseudo, pool)
    assert len(merged) == 50
    assert sum(r.label_source == "pseudo" for r in merged.records) == 18
    assert merged.ids[:32] == gold.ids
    assert all(r.label is Label.LOSS for r in merged.records[32:])


def test_merge_empty_and_errors():
    gold = _manifest("g", 5)
    assert merge_datasets(gold, [], _manifest("p", 3, None)).ids == gold.ids
    with pytest.raises(ValidationError):
        merge_datasets(gold, [], _manifest("g", 2, None))
    with pytest.raises(ValidationError):
        merge_datasets(gold, [PseudoLabel("zzz", Label.WIN, 0.3)], _manifest("p", 2, None))


def test_simulated_noise_rates():
    truth = [Label.WIN if i % 4 else Label.LOSS for i in range(10000)]
    for rate, lo, hi in ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.356, 0.356 - 0.015, 0.356 + 0.015)):
        sim = simulate_pseudo_labels(truth, rate, seed=4)
        flipped = sum(p.label is not t for p, t in zip(sim, truth)) / len(truth)
        assert lo <= flipped <= hi
    a = simulate_pseudo_labels(truth[:50], 0.3, seed=1)
    assert a == simulate_pseudo_labels(truth[:50], 0.3, seed=1)
    assert all(0.1 <= p.margin <= 0.9 and not p.excluded for p in a)
    with pytest.raises(ValidationError):
        simulate_pseudo_labels(truth, 1.5, 0)


def test_pseudo_label_json_round_trip():
    p = PseudoLabel("a", Label.WIN, 0.25, True)
    assert PseudoLabel.from_json(p.to_json()) == p
