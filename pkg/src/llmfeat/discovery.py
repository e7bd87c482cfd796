"""Automatic feature discovery: prompt construction and response parsing.

The discovery prompt carries dataset metadata plus a seeded sample of
example rows; the model answers with a JSON list of features, each with a
name, description, value space and extraction query.
"""
from __future__ import annotations

import json
import random
import re
import string
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Sequence

from .errors import ParseError, TemplateError, ValidationError

MAX_CATEGORIES = 15
OTHER = "Other"
RECOMMENDED_FEATURE_COUNT = 20
FEATURE_KINDS = ("categorical", "ordinal", "binary", "multilabel", "text")


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    description: str
    text_column: str
    target_column: str
    target_definition: str
    example_rows: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(
            self, "example_rows", tuple((str(t), str(y)) for t, y in self.example_rows)
        )


@dataclass(frozen=True)
class FeatureSpec:
    feature_name: str
    description: str
    possible_values: tuple[str, ...]
    extraction_query: str
    kind: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "possible_values", tuple(str(v) for v in self.possible_values))
        if not self.feature_name or not self.feature_name.strip():
            raise ValidationError("feature_name must be non-empty")
        if not self.extraction_query or not self.extraction_query.strip():
            raise ValidationError(f"feature {self.feature_name!r}: extraction_query must be non-empty")
        if self.kind is not None and self.kind not in FEATURE_KINDS:
            raise ValidationError(f"feature {self.feature_name!r}: unknown kind {self.kind!r}")
        if self.effective_kind != "text" and not self.possible_values:
            raise ValidationError(f"feature {self.feature_name!r}: possible_values is empty")
        if len(set(self.possible_values)) != len(self.possible_values):
            raise ValidationError(f"feature {self.feature_name!r}: duplicate possible_values")

    @property
    def column(self) -> str:
        """snake_case identifier used as the table column name."""
        return snake_case(self.feature_name)

    @property
    def effective_kind(self) -> str:
        if self.kind is not None:
            return self.kind
        if not self.possible_values:
            return "text"
        if len(self.possible_values) == 2:
            return "binary"
        return "categorical"

    @property
    def has_other(self) -> bool:
        return OTHER in self.possible_values

    def to_dict(self) -> dict:
        out = {
            "feature_name": self.feature_name,
            "description": self.description,
            "possible_values": list(self.possible_values),
            "extraction_query": self.extraction_query,
        }
        if self.kind is not None:
            out["kind"] = self.kind
        return out


@dataclass(frozen=True)
class DiscoveryPrompt:
    system_message: str
    body: str
    sample_count: int
    metadata: dict = field(default_factory=dict)


def snake_case(name: str) -> str:
    s = re.sub(r"([a-z])([A-Z])", r"\1_\2", name.strip())
    s = re.sub(r"[^0-9a-zA-Z]+", "_", s).strip("_").lower()
    if not s:
        raise ValidationError(f"cannot derive a column name from {name!r}")
    if s[0].isdigit():
        s = "f_" + s
    return s


# --------------------------------------------------------------------------- #
# prompt construction


def default_template() -> str:
    return resources.files("llmfeat").joinpath("data/discovery_prompt.json").read_text("utf-8")


def _json_escape(value: str) -> str:
    return json.dumps(value, ensure_ascii=False)[1:-1]


def build_discovery_prompt(meta: DatasetMeta, sample_size: int = 40, seed: int = 0,
                           template: str | None = None) -> DiscoveryPrompt:
    """Instantiate the discovery template for ``meta``.

    ``sample_size`` example rows are drawn without replacement from
    ``meta.example_rows`` with ``random.Random(seed)``; the sample keeps the
    original row order.
    """
    if sample_size < 1:
        raise ValueError("sample_size must be at least 1; the template needs examples")
    if sample_size > len(meta.example_rows):
        raise ValueError(
            f"sample_size {sample_size} exceeds the {len(meta.example_rows)} available rows"
        )
    template = default_template() if template is None else template
    picks = sorted(random.Random(seed).sample(range(len(meta.example_rows)), sample_size))
    examples = [
        {meta.text_column: meta.example_rows[i][0], meta.target_column: meta.example_rows[i][1]}
        for i in picks
    ]
    values = {
        "name": meta.name,
        "description": f"{meta.description} The text column is '{meta.text_column}'.",
        "target": f"{meta.target_column}: {meta.target_definition}",
        "examples": json.dumps(examples, ensure_ascii=False),
    }
    try:
        body = string.Template(template).substitute(
            {k: _json_escape(v) for k, v in values.items()}
        )
    except (KeyError, ValueError) as exc:
        raise TemplateError(f"unsubstituted placeholder in discovery template: {exc}") from exc
    try:
        system_message = json.loads(body).get("system_message", "")
    except json.JSONDecodeError:
        system_message = ""
    return DiscoveryPrompt(system_message, body, sample_size,
                           {"seed": seed, "sample_rows": picks})


# --------------------------------------------------------------------------- #
# response parsing

_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n(.*?)\n?\s*```\s*$", re.S)
_OPTIONS = re.compile(r"Options:\s*(.*?)\.?\s*$", re.S)
_QUOTED = re.compile(r"'((?:[^'\\]|\\.)*)'")


def strip_fences(raw: str) -> str:
    m = _FENCE.match(raw)
    return m.group(1) if m else raw.strip()


def options_from_query(query: str) -> list[str]:
    """Quoted options listed after ``Options:`` in an extraction query; ``...`` is skipped."""
    m = _OPTIONS.search(query)
    if not m:
        return []
    return [v for v in _QUOTED.findall(m.group(1)) if v.strip() and v.strip() != "..."]


def _spec_from_entry(entry, index: int) -> FeatureSpec:
    if not isinstance(entry, dict):
        raise ValidationError(f"feature #{index}: expected an object, got {type(entry).__name__}")
    for key in ("feature_name", "extraction_query"):
        if key not in entry:
            raise ValidationError(f"feature #{index}: missing required key {key!r}")
    values = entry.get("possible_values")
    if values is None:
        values = options_from_query(str(entry["extraction_query"]))
    elif not isinstance(values, list):
        raise ValidationError(f"feature #{index}: possible_values must be a list")
    try:
        return FeatureSpec(
            feature_name=str(entry["feature_name"]),
            description=str(entry.get("description", "")),
            possible_values=tuple(str(v) for v in values),
            extraction_query=str(entry["extraction_query"]),
            kind=entry.get("kind"),
        )
    except ValidationError as exc:
        raise ValidationError(f"feature #{index}: {exc}") from exc


def parse_feature_specs(raw: str) -> list[FeatureSpec]:
    """Parse a discovery response (optionally fenced) into validated specs.

    Accepts ``{"features": [...]}`` or a bare list. Entries without
    ``possible_values`` take them from the ``Options:`` clause of their
    extraction query, or become free-text features when there is none.
    Malformed JSON is rejected, never repaired.
    """
    body = strip_fences(raw)
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at offset {exc.pos}: {exc.msg}", offset=exc.pos) from exc
    entries = data.get("features") if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise ValidationError("response has no 'features' list")
    if not entries:
        raise ValidationError("feature list is empty")
    specs = [_spec_from_entry(e, i) for i, e in enumerate(entries)]
    seen = {}
    for i, s in enumerate(specs):
        col = s.column
        if s.feature_name in seen or col in seen:
            raise ValidationError(f"feature #{i}: duplicate feature name {s.feature_name!r}")
        seen[s.feature_name] = seen[col] = i
    return specs


def cap_categories(spec: FeatureSpec, max_categories: int = MAX_CATEGORIES) -> FeatureSpec:
    """Keep the first ``max_categories`` values and add an ``Other`` fallback."""
    values = [v for v in spec.possible_values if v != OTHER]
    if len(values) <= max_categories:
        return spec
    return replace(spec, possible_values=tuple(values[:max_categories]) + (OTHER,))


def serialize_specs(specs: Sequence[FeatureSpec]) -> str:
    return json.dumps({"features": [s.to_dict() for s in specs]}, indent=2, ensure_ascii=False) + "\n"


def load_specs(path) -> list[FeatureSpec]:
    return parse_feature_specs(Path(path).read_text(encoding="utf-8"))


def save_specs(specs: Sequence[FeatureSpec], path) -> None:
    Path(path).write_text(serialize_specs(specs), encoding="utf-8")
