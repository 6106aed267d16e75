"""VLM prompt assembly, response parsing and pseudo-label selection.

Responses arrive as files in a tagged-section format::

    SAMPLE_ID: syn0042
    [ACTION_UNITS]
    AU12 lip corner puller (brief), repeated self-touch of the chin ...
    [EVIDENCE_WIN]
    - relaxed shoulders while answering
    [EVIDENCE_LOSS]
    - gaze aversion after the score question
    [REFLECTION]
    The chin touching follows sweating; rule 1 applies, so it is not counted.
    [CONFIDENCE]
    win: 0.70
    loss: 0.30

``SAMPLE_ID`` is optional (the file stem is used otherwise). Evidence items are
lines starting with ``-``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from hiddenemo.datamodel import DatasetManifest, Label, ValidationError
from hiddenemo.seeding import rng

SECTIONS = ("ACTION_UNITS", "EVIDENCE_WIN", "EVIDENCE_LOSS", "REFLECTION", "CONFIDENCE")


class ParseError(ValidationError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class PriorRuleSet:
    rules: tuple[str, ...]
    version: str = "v1"

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.rules:
            raise ValidationError("prior rule set is empty")
        if any(not r.strip() for r in self.rules):
            raise ValidationError("prior rules must be non-empty text")


# Placeholder rules; the original prompt was not published.
DEFAULT_RULES = PriorRuleSet(
    (
        "Touching or scratching the face after a match is weak evidence on its own. Players sweat heavily, "
        "and sweat, dust and drying skin make the face itch, so do not read such touches as self-soothing "
        "unless other signs of distress accompany them.",
    ),
    version="placeholder-1",
)

MARKERS = {
    "action_units": "### 1. ACTION UNITS",
    "rules": "### 2. PRIOR RULES",
    "evidence": "### 3. EVIDENCE",
    "reflection": "### 4. REFLECTION",
    "format": "### 5. OUTPUT FORMAT",
}


def build_prompt(rules: PriorRuleSet = DEFAULT_RULES) -> str:
    if not isinstance(rules, PriorRuleSet):
        rules = PriorRuleSet(tuple(rules))
    rule_lines = "\n".join(f"Rule {i}: {r}" for i, r in enumerate(rules.rules, 1))
    return "\n".join(
        [
            "You will watch a post-match tennis interview. Work through the steps below in order.",
            "",
            MARKERS["action_units"],
            "Identify the facial action units (FACS), postural action units (PGCS) and gestural action units "
            "(GACS) shown by the interviewee. For each one, note roughly when it occurs and what emotion it "
            "usually signals.",
            "",
            MARKERS["rules"],
            f"Apply these rules (version {rules.version}) while interpreting the action units:",
            rule_lines,
            "",
            MARKERS["evidence"],
            "Using the action units and the rules, write two lists: observations suggesting the player won "
            "and observations suggesting the player lost. Do not give a verdict in this step.",
            "",
            MARKERS["reflection"],
            "Re-read both lists. For every item, check whether its interpretation conflicts with any prior "
            "rule. Remove or reinterpret items that do, and say which ones you changed.",
            "",
            MARKERS["format"],
            "Answer with exactly these tagged sections:",
            "[ACTION_UNITS]",
            "[EVIDENCE_WIN]   (one '- ' item per line)",
            "[EVIDENCE_LOSS]  (one '- ' item per line)",
            "[REFLECTION]",
            "[CONFIDENCE]",
            "win: <number between 0 and 1>",
            "loss: <number between 0 and 1>",
            "",
        ]
    )


@dataclass
class VlmResponse:
    sample_id: str
    action_units_text: str
    evidence_win: list[str]
    evidence_loss: list[str]
    confidence_win: float
    confidence_loss: float
    reflection_text: str = ""
    raw_text: str = ""

    def __post_init__(self):
        for name in ("confidence_win", "confidence_loss"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and np.isfinite(v) and 0.0 <= v <= 1.0):
                raise ParseError(name, f"confidence {v!r} outside [0, 1]")


_SECTION_RE = re.compile(r"^\[([A-Z_]+)\]\s*$")


def parse_response_text(text: str, sample_id: str | None = None) -> VlmResponse:
    sections: dict[str, list[str]] = {}
    current = None
    header_id = None
    for line in text.splitlines():
        m = _SECTION_RE.match(line.strip())
        if m and m.group(1) in SECTIONS:
            current = m.group(1)
            sections[current] = []
            continue
        if current is None:
            if line.strip().upper().startswith("SAMPLE_ID:"):
                header_id = line.split(":", 1)[1].strip()
            continue
        sections[current].append(line)

    for name in SECTIONS:
        if name not in sections:
            raise ParseError(name, "section missing")

    conf = {}
    for line in sections["CONFIDENCE"]:
        if ":" in line:
            key, value = line.split(":", 1)
            conf[key.strip().lower()] = value.strip()
    values = {}
    for key in ("win", "loss"):
        field_name = f"confidence_{key}"
        if key not in conf:
            raise ParseError(field_name, "missing from CONFIDENCE section")
        try:
            values[key] = float(conf[key])
        except ValueError:
            raise ParseError(field_name, f"not a number: {conf[key]!r}") from None

    def items(name):
        return [l.strip()[1:].strip() for l in sections[name] if l.strip().startswith("-")]

    def block(name):
        return "\n".join(sections[name]).strip()

    return VlmResponse(
        sample_id=header_id or sample_id or "",
        action_units_text=block("ACTION_UNITS"),
        evidence_win=items("EVIDENCE_WIN"),
        evidence_loss=items("EVIDENCE_LOSS"),
        confidence_win=values["win"],
        confidence_loss=values["loss"],
        reflection_text=block("REFLECTION"),
        raw_text=text,
    )


def parse_response(path) -> VlmResponse:
    path = Path(path)
    return parse_response_text(path.read_text(encoding="utf-8"), sample_id=path.stem)


def format_response(resp: VlmResponse) -> str:
    lines = [f"SAMPLE_ID: {resp.sample_id}", "[ACTION_UNITS]", resp.action_units_text, "[EVIDENCE_WIN]"]
    lines += [f"- {e}" for e in resp.evidence_win]
    lines += ["[EVIDENCE_LOSS]"] + [f"- {e}" for e in resp.evidence_loss]
    lines += ["[REFLECTION]", resp.reflection_text, "[CONFIDENCE]"]
    lines += [f"win: {resp.confidence_win!r}", f"loss: {resp.confidence_loss!r}", ""]
    return "\n".join(lines)


def write_response(resp: VlmResponse, path) -> None:
    Path(path).write_text(format_response(resp), encoding="utf-8")


@dataclass(frozen=True)
class PseudoLabel:
    sample_id: str
    label: Label
    margin: float
    excluded: bool = False

    def to_json(self) -> dict:
        return {"sample_id": self.sample_id, "label": self.label.value, "margin": self.margin,
                "excluded": self.excluded}

    @classmethod
    def from_json(cls, d: dict) -> "PseudoLabel":
        return cls(d["sample_id"], Label(d["label"]), float(d["margin"]), bool(d.get("excluded", False)))


def select_pseudo_label(resp: VlmResponse, exclusion_threshold: float = 0.0) -> PseudoLabel:
    """Higher confidence wins; ``margin <= exclusion_threshold`` (an exact tie by default) is excluded."""
    margin = abs(resp.confidence_win - resp.confidence_loss)
    label = Label.WIN if resp.confidence_win > resp.confidence_loss else Label.LOSS
    return PseudoLabel(resp.sample_id, label, margin, margin <= exclusion_threshold)


def merge_datasets(gold: DatasetManifest, pseudo: list[PseudoLabel], pool: DatasetManifest) -> DatasetManifest:
    """Gold records unchanged, followed by pool records carrying their (non-excluded) pseudo-labels."""
    pool_ids = set(pool.ids)
    clash = sorted(set(gold.ids) & pool_ids)
    if clash:
        raise ValidationError(f"sample ids in both gold and pool: {clash[:5]}")
    unknown = [p.sample_id for p in pseudo if p.sample_id not in pool_ids]
    if unknown:
        raise ValidationError(f"pseudo-labels for ids not in the pool: {unknown[:5]}")
    chosen = {p.sample_id: p for p in pseudo if not p.excluded}
    extra = [
        replace(r, label=chosen[r.sample_id].label, label_source="pseudo")
        for r in pool.records
        if r.sample_id in chosen
    ]
    return DatasetManifest(list(gold.records) + extra, "train")


def simulate_pseudo_labels(true_labels, noise_rate: float, seed, sample_ids=None) -> list[PseudoLabel]:
    """Flip each label independently with probability ``noise_rate``; margins ~ U(0.1, 0.9)."""
    if not 0.0 <= noise_rate <= 1.0:
        raise ValidationError("noise_rate must be in [0, 1]")
    labels = list(true_labels)
    ids = list(sample_ids) if sample_ids is not None else [f"s{i}" for i in range(len(labels))]
    gen = rng("pseudo-noise", seed)
    flips = gen.random(len(labels)) < noise_rate
    margins = gen.uniform(0.1, 0.9, size=len(labels))
    return [
        PseudoLabel(sid, lab.flipped() if f else lab, float(m))
        for sid, lab, f, m in zip(ids, labels, flips, margins)
    ]
