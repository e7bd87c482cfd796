"""Per-row feature value extraction through an LLM.

Two prompt styles are supported: one prompt per (row, feature) asking for a
single JSON key, and one prompt per row listing every feature. Requests go
to a backend (HTTP chat-completion endpoint or a fixture-driven mock) or are
written to JSONL batch files for offline processing.
"""
from __future__ import annotations

import json
import logging
import math
import os
import string
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

from .discovery import OTHER, FeatureSpec
from .errors import ConfigError, TransportError, ValidationError
from .table import AugmentedTable, Column, explode_multilabel

log = logging.getLogger(__name__)

ID_SEP = "::"
ALL_FEATURES = "all"
DEFAULT_MAX_REQUESTS_PER_FILE = 600
BATCH_URL = "/v1/chat/completions"
STATUSES = ("ok", "refused", "transport-error")


@dataclass(frozen=True)
class ExtractionPrompt:
    feature_names: tuple[str, ...]
    body: str
    row_id: str
    expected_schema: Mapping[str, tuple[str, ...]]
    prompt_id: str
    system_message: str | None = None

    @property
    def custom_id(self) -> str:
        return f"{self.row_id}{ID_SEP}{self.prompt_id}"


@dataclass(frozen=True)
class LlmRequest:
    custom_id: str
    model: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    top_p: float = 0.9
    deterministic: bool = True

    def body(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in self.messages],
            "temperature": self.temperature,
            "top_p": self.top_p,
        }


@dataclass(frozen=True)
class LlmResponse:
    custom_id: str
    content: str
    status: str = "ok"
    error: str | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.status == "ok" and not self.content:
            raise ValueError("ok responses need content")


@dataclass
class GenerationReport:
    rows_total: int = 0
    rows_valid: int = 0
    rows_invalid: int = 0
    rows_dropped: int = 0
    policy: str = "strict"
    invalid_details: list = field(default_factory=list)
    coerced: int = 0

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "rows_total": self.rows_total,
            "rows_valid": self.rows_valid,
            "rows_invalid": self.rows_invalid,
            "rows_dropped": self.rows_dropped,
            "coerced_cells": self.coerced,
            "invalid_details": [list(d) for d in self.invalid_details],
        }


def split_custom_id(custom_id: str) -> tuple[str, str]:
    if ID_SEP not in custom_id:
        raise ValidationError(f"malformed custom_id {custom_id!r}")
    row_id, prompt_id = custom_id.rsplit(ID_SEP, 1)
    return row_id, prompt_id


# --------------------------------------------------------------------------- #
# prompts


def _single_template() -> str:
    return resources.files("llmfeat").joinpath("data/single_feature_prompt.txt").read_text("utf-8")


def build_single_feature_prompt(spec: FeatureSpec, text: str, row_id: str = "0", *,
                                subject: str = "a research paper", source: str = "its abstract",
                                source_label: str = "Abstract", label: str | None = None,
                                instruction: str | None = None,
                                template: str | None = None) -> ExtractionPrompt:
    """Prompt asking for one feature, answered as ``{"<name>": "<value>"}``.

    ``label`` and ``instruction`` default to the feature name and a generated
    list of the allowed values.
    """
    if not text or not text.strip():
        raise ValueError("text to be evaluated is empty")
    values = spec.possible_values
    if instruction is None:
        if spec.effective_kind == "multilabel":
            instruction = ("Choose all that apply from: " + ", ".join(values)
                           + ". Give them as a JSON list.")
        elif values:
            instruction = f"You will choose exactly one of: {', '.join(values)}."
        else:
            instruction = spec.extraction_query
    body = string.Template(template or _single_template()).substitute(
        subject=subject, source=source, source_label=source_label,
        label=label or spec.feature_name.replace("_", " "),
        description=spec.description.strip() or spec.extraction_query,
        instruction=instruction, name=spec.feature_name, text=text,
    )
    return ExtractionPrompt((spec.feature_name,), body, str(row_id),
                            {spec.feature_name: values}, spec.column)


def build_multi_feature_prompt(specs: Sequence[FeatureSpec], text: str,
                               row_id: str = "0") -> ExtractionPrompt:
    """One JSON prompt listing every feature with its extraction query."""
    if not specs:
        raise ValueError("at least one feature spec is required")
    names = [s.feature_name for s in specs]
    if len(set(names)) != len(names) or len({s.column for s in specs}) != len(specs):
        raise ValueError(f"duplicate feature names in {names}")
    payload = {
        "input_text": text,
        "task": "Extract the following features as described below and return a valid JSON object.",
        "constraints": [
            "The output must be a valid JSON.",
            "All answers must be simple and correspond to categorical values only.",
        ],
        "features": [
            {"feature_name": s.feature_name, "description": s.description,
             "extraction_query": s.extraction_query}
            for s in specs
        ],
        "output_format": {
            "type": "json",
            "structure": {"features": [{"feature_name": "<Feature Name>",
                                        "answer": "<Extracted Answer>"}]},
        },
    }
    body = json.dumps(payload, indent=2, ensure_ascii=False)
    return ExtractionPrompt(tuple(names), body, str(row_id),
                            {s.feature_name: s.possible_values for s in specs}, ALL_FEATURES)


def build_prompts(table: AugmentedTable, specs: Sequence[FeatureSpec], text_column: str,
                  workflow: str = "auto", **single_kwargs) -> list[ExtractionPrompt]:
    """Prompts for every row: ``user`` = one per feature, ``auto`` = one per row."""
    texts = table.column(text_column).values
    out = []
    for rid, text in zip(table.row_ids, texts):
        text = text or ""
        if workflow == "user":
            out.extend(build_single_feature_prompt(s, text, rid, **single_kwargs) for s in specs)
        elif workflow == "auto":
            out.append(build_multi_feature_prompt(specs, text, rid))
        else:
            raise ValueError(f"unknown workflow {workflow!r}")
    return out


def make_request(prompt: ExtractionPrompt, model: str, temperature: float = 0.0,
                 top_p: float = 0.9) -> LlmRequest:
    messages = []
    if prompt.system_message:
        messages.append(("system", prompt.system_message))
    messages.append(("user", prompt.body))
    return LlmRequest(prompt.custom_id, model, tuple(messages), temperature, top_p,
                      deterministic=temperature == 0)


# --------------------------------------------------------------------------- #
# backends


class Backend(Protocol):
    def complete(self, request: LlmRequest) -> LlmResponse: ...


class MockBackend:
    """Answers from a ``{custom_id: content}`` fixture; never touches the network."""

    def __init__(self, fixtures: Mapping[str, str], delay: float = 0.0):
        self.fixtures = dict(fixtures)
        self.delay = delay
        self.calls: list[str] = []
        self.max_in_flight = 0
        self._in_flight = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path) -> "MockBackend":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: mock fixture must be a JSON object")
        return cls({str(k): v if isinstance(v, str) else json.dumps(v) for k, v in data.items()})

    def complete(self, request: LlmRequest) -> LlmResponse:
        with self._lock:
            self.calls.append(request.custom_id)
            self._in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self._in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            content = self.fixtures.get(request.custom_id)
            if content is None:
                return LlmResponse(request.custom_id, "", "transport-error",
                                   "no fixture for this custom_id")
            return LlmResponse(request.custom_id, content)
        finally:
            with self._lock:
                self._in_flight -= 1


class HttpBackend:
    """Chat-completion endpoint over HTTPS (OpenAI-compatible JSON)."""

    def __init__(self, endpoint: str, api_key: str | None = None,
                 api_key_env: str = "OPENAI_API_KEY", timeout: float = 60.0):
        if not endpoint:
            raise ConfigError("live backend needs an endpoint URL")
        key = api_key or os.environ.get(api_key_env)
        if not key:
            raise ConfigError(f"live backend needs an API key (set {api_key_env})")
        self.endpoint = endpoint
        self._key = key
        self.timeout = timeout

    def complete(self, request: LlmRequest) -> LlmResponse:
        data = json.dumps(request.body()).encode("utf-8")
        req = urllib.request.Request(
            self.endpoint, data=data, method="POST",
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {self._key}"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise TransportError(f"HTTP {exc.code}") from exc
            return LlmResponse(request.custom_id, "", "transport-error", f"HTTP {exc.code}")
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            raise TransportError(str(exc)) from exc
        return _response_from_completion(request.custom_id, payload)


def _response_from_completion(custom_id: str, body: Mapping) -> LlmResponse:
    try:
        message = body["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        return LlmResponse(custom_id, "", "transport-error", "no choices in completion body")
    if message.get("refusal"):
        return LlmResponse(custom_id, "", "refused", str(message["refusal"]))
    content = message.get("content") or ""
    if not content:
        return LlmResponse(custom_id, "", "refused", "empty completion")
    return LlmResponse(custom_id, content)


def submit(requests: Sequence[LlmRequest], backend: Backend, parallelism: int = 4,
           attempts: int = 3, backoff: float = 0.5, max_backoff: float = 8.0,
           sleep=time.sleep) -> list[LlmResponse]:
    """Send requests with at most ``parallelism`` in flight.

    Transport failures are retried with capped exponential backoff; after
    ``attempts`` tries the response carries status ``transport-error``.
    Results come back in request order.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be at least 1")
    ids = [r.custom_id for r in requests]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate custom_id in request list")

    def one(req):
        for k in range(attempts):
            try:
                return backend.complete(req)
            except TransportError as exc:
                err = str(exc)
                if k + 1 < attempts:
                    sleep(min(max_backoff, backoff * 2 ** k))
        return LlmResponse(req.custom_id, "", "transport-error", err)

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, requests))


# --------------------------------------------------------------------------- #
# batch files


def emit_batch_file(requests: Sequence[LlmRequest], path) -> int:
    """Write one JSONL request line per request; returns the line count."""
    ids = [r.custom_id for r in requests]
    dup = {i for i in ids if ids.count(i) > 1} if len(set(ids)) != len(ids) else set()
    if dup:
        raise ValidationError(f"duplicate custom_id(s): {sorted(dup)[:5]}")
    lines = [
        json.dumps({"custom_id": r.custom_id, "method": "POST", "url": BATCH_URL,
                    "body": r.body()}, ensure_ascii=False)
        for r in requests
    ]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return len(lines)


def emit_batch_files(requests: Sequence[LlmRequest], directory,
                     max_requests: int = DEFAULT_MAX_REQUESTS_PER_FILE,
                     prefix: str = "batch") -> list[Path]:
    """Split requests into consecutive files of at most ``max_requests`` lines."""
    if max_requests < 1:
        raise ValueError("max_requests must be at least 1")
    ids = [r.custom_id for r in requests]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate custom_id in request list")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n_files = math.ceil(len(requests) / max_requests)
    width = max(3, len(str(n_files)))
    paths = []
    for k in range(n_files):
        p = directory / f"{prefix}_{k + 1:0{width}d}.jsonl"
        emit_batch_file(requests[k * max_requests:(k + 1) * max_requests], p)
        paths.append(p)
    return paths


def read_batch_requests(path) -> list[LlmRequest]:
    out = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        body = obj["body"]
        temp = float(body.get("temperature", 0.0))
        out.append(LlmRequest(
            obj["custom_id"], body["model"],
            tuple((m["role"], m["content"]) for m in body["messages"]),
            temp, float(body.get("top_p", 1.0)), deterministic=temp == 0,
        ))
    return out


def batch_result_record(custom_id: str, content: str | None, *, error: str | None = None,
                        refusal: str | None = None) -> dict:
    """A result line in the batch output format (used by tests and the mock)."""
    if error is not None:
        return {"custom_id": custom_id, "response": None,
                "error": {"code": "error", "message": error}}
    message = {"role": "assistant", "content": content}
    if refusal is not None:
        message = {"role": "assistant", "content": None, "refusal": refusal}
    return {"custom_id": custom_id, "error": None,
            "response": {"status_code": 200, "body": {"choices": [{"message": message}]}}}


def ingest_batch_results(path) -> tuple[list[LlmResponse], list[tuple[int, str]]]:
    """Parse a results JSONL file.

    Returns ``(responses, malformed)`` where ``malformed`` lists
    ``(line_number, reason)`` for lines that could not be interpreted.
    """
    text = Path(path).read_text(encoding="utf-8")
    responses, malformed = [], []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            malformed.append((n, f"invalid JSON: {exc.msg}"))
            continue
        if not isinstance(obj, dict) or "custom_id" not in obj:
            malformed.append((n, "missing custom_id"))
            continue
        cid = str(obj["custom_id"])
        if obj.get("error"):
            err = obj["error"]
            msg = err.get("message", str(err)) if isinstance(err, dict) else str(err)
            responses.append(LlmResponse(cid, "", "transport-error", msg))
            continue
        resp = obj.get("response") or {}
        status = resp.get("status_code", 200)
        if status != 200:
            responses.append(LlmResponse(cid, "", "transport-error", f"HTTP {status}"))
            continue
        responses.append(_response_from_completion(cid, resp.get("body") or {}))
    for n, reason in malformed:
        log.warning("%s line %d: %s", path, n, reason)
    return responses, malformed


# --------------------------------------------------------------------------- #
# response validation


def extract_json_object(content: str):
    """First balanced ``{...}`` object in ``content`` (fences and prose ignored)."""
    start = content.find("{")
    while start != -1:
        depth, in_str, esc = 0, False, False
        for i in range(start, len(content)):
            ch = content[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(content[start:i + 1])
                    except json.JSONDecodeError:
                        break
        start = content.find("{", start + 1)
    raise ValueError("no JSON object found")


def _answers(obj) -> dict:
    """Normalise both answer shapes to ``{name: value}``."""
    if isinstance(obj, dict) and isinstance(obj.get("features"), list):
        out = {}
        for entry in obj["features"]:
            if isinstance(entry, dict) and "feature_name" in entry:
                out[str(entry["feature_name"])] = entry.get("answer")
        return out
    if isinstance(obj, dict):
        return dict(obj)
    raise ValueError("answer is not a JSON object")


def _lookup(answers: dict, spec: FeatureSpec):
    for key in (spec.feature_name, spec.column):
        if key in answers:
            return True, answers[key]
    folded = {str(k).strip().casefold(): v for k, v in answers.items()}
    for key in (spec.feature_name, spec.column):
        if key.casefold() in folded:
            return True, folded[key.casefold()]
    return False, None


def _as_text(value) -> str | None:
    if value is None:
        return None
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _check_value(spec: FeatureSpec, value, policy: str):
    """Returns (cell, problem, coerced)."""
    kind = spec.effective_kind
    if kind == "text":
        text = _as_text(value)
        return (text, None, False) if text and text.strip() else (None, "empty answer", False)
    if kind == "multilabel":
        if isinstance(value, str):
            labels = [v.strip() for v in value.split(";") if v.strip()]
        elif isinstance(value, list):
            labels = [_as_text(v) for v in value]
        else:
            return None, f"not a label list: {value!r}", False
        resolved, coerced = [], False
        for lab in labels:
            cell, problem, c = _check_scalar(spec, lab, policy)
            if problem:
                return None, problem, False
            coerced |= c
            if cell is not None:
                resolved.append(cell)
        order = {v: i for i, v in enumerate(spec.possible_values)}
        return tuple(sorted(set(resolved), key=order.__getitem__)), None, coerced
    return _check_scalar(spec, _as_text(value), policy)


def _check_scalar(spec: FeatureSpec, text, policy: str):
    if text is None:
        return None, "missing answer", False
    if text in spec.possible_values:
        return text, None, False
    if policy == "coerce":
        norm = {v.strip().casefold(): v for v in spec.possible_values}
        hit = norm.get(text.strip().casefold())
        if hit is not None:
            return hit, None, True
        if spec.has_other:
            return OTHER, None, True
        return None, f"value {text!r} outside the allowed values", False
    return None, f"value {text!r} outside the allowed values", False


def validate_and_attach(responses: Iterable[LlmResponse], specs: Sequence[FeatureSpec],
                        table: AugmentedTable, policy: str = "strict",
                        multilabel_sep: str = ";") -> tuple[AugmentedTable, GenerationReport]:
    """Check answers against each feature's value space and add them as columns.

    ``strict`` drops any row with a missing or out-of-space answer. ``coerce``
    keeps every row, accepts case/whitespace variants, maps unknown values to
    ``Other`` where the feature has that category and leaves the cell missing
    otherwise; rows with missing cells are still counted as invalid.
    """
    if policy not in ("strict", "coerce"):
        raise ValueError(f"unknown policy {policy!r}")
    known_rows = set(table.row_ids)
    by_name = {s.column: s for s in specs}
    answers: dict[str, dict[str, tuple]] = {rid: {} for rid in table.row_ids}
    errors: dict[str, list] = {rid: [] for rid in table.row_ids}
    for resp in responses:
        rid, pid = split_custom_id(resp.custom_id)
        if rid not in known_rows:
            raise ValidationError(f"response {resp.custom_id!r} refers to unknown row {rid!r}")
        if pid != ALL_FEATURES and pid not in by_name:
            raise ValidationError(f"response {resp.custom_id!r} refers to unknown feature {pid!r}")
        targets = list(specs) if pid == ALL_FEATURES else [by_name[pid]]
        if resp.status != "ok":
            for s in targets:
                errors[rid].append((s.feature_name, f"<{resp.status}>"))
            continue
        try:
            parsed = _answers(extract_json_object(resp.content))
        except ValueError:
            for s in targets:
                errors[rid].append((s.feature_name, "<non-JSON response>"))
            continue
        for s in targets:
            found, value = _lookup(parsed, s)
            if found:
                answers[rid][s.feature_name] = value

    report = GenerationReport(rows_total=table.n_rows, policy=policy)
    cells = {s.feature_name: [] for s in specs}
    valid_rows = []
    for i, rid in enumerate(table.row_ids):
        row_problems = list(errors[rid])
        for s in specs:
            if s.feature_name not in answers[rid]:
                if not any(f == s.feature_name for f, _ in errors[rid]):
                    row_problems.append((s.feature_name, "<no answer>"))
                cells[s.feature_name].append(None)
                continue
            value = answers[rid][s.feature_name]
            cell, problem, coerced = _check_value(s, value, policy)
            if problem:
                row_problems.append((s.feature_name, _as_text(value) if not isinstance(value, list)
                                     else json.dumps(value)))
            report.coerced += int(coerced)
            cells[s.feature_name].append(cell)
        if row_problems:
            report.rows_invalid += 1
            report.invalid_details.extend((rid, f, v) for f, v in row_problems)
        else:
            report.rows_valid += 1
        if not row_problems or policy == "coerce":
            valid_rows.append(i)

    out = table
    for s in specs:
        kind = s.effective_kind
        values = cells[s.feature_name]
        if kind == "multilabel":
            col = Column(s.column, "text", [None if v is None else multilabel_sep.join(v)
                                            for v in values])
            for b in explode_multilabel(col, s.possible_values, sep=multilabel_sep):
                if any(v is None for v in values):
                    b = Column(b.name, b.kind, [None if v is None else x
                                                for v, x in zip(values, b.values)], b.categories)
                out = out.with_column(b)
        elif kind == "text":
            out = out.with_column(Column(s.column, "text", values))
        else:
            out = out.with_column(Column(s.column, kind, values, s.possible_values))
    if policy == "strict":
        report.rows_dropped = table.n_rows - len(valid_rows)
        out = out.take(valid_rows)
    return out, report
