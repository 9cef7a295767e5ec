"""Experiment files, trace export and report formatting.

An experiment file is YAML::

    model: bert-large-moe          # preset name, or a mapping (see below)
    profile:
      preset: cluster1             # optional base; listed fields override it
      alpha_ar_us: 0
    policies: [VANILLA_EP, FLOWMOE]
    r_values: [1, 2, 4]            # default: the model's R
    sp: auto                       # bytes per AR chunk, auto (tuned), or null
    seed: 0
    outputs:
      trace: out/trace.json
      report: out/report.csv

A model mapping may name a ``preset`` and override any of P, L, B, N, M,
H, E, k, f, R, bytes_per_param; without a preset every field except R and
bytes_per_param is required. Profile overrides are keyed ``KIND/PHASE``
(for example ``AT/FORWARD: 40.0``).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import yaml

from .cost import CostError, HardwareProfile
from .model import ConfigError, ModelConfig, Phase, TaskKind, Timeline, validate
from .presets import MODEL_NAMES, PROFILE_NAMES, model_preset, profile_preset
from .schedule import Policy

SpValue = Union[int, str, None]

MODEL_FIELDS = tuple(f.name for f in fields(ModelConfig))
PROFILE_FIELDS = ("flops_per_us", "bw_bytes_per_us", "alpha_a2a_us", "alpha_ar_us", "compute_scale", "backward_factor")
TOP_KEYS = ("model", "profile", "policies", "r_values", "sp", "seed", "outputs")


class SpecError(ValueError):
    """Invalid experiment file; ``problems`` lists ``(where, message)`` pairs."""

    def __init__(self, problems: Sequence[Tuple[str, str]]):
        self.problems = list(problems)
        super().__init__("; ".join(f"{w}: {m}" for w, m in self.problems))


@dataclass(frozen=True)
class ExperimentSpec:
    model: ModelConfig
    profile: HardwareProfile
    policies: Tuple[Policy, ...] = tuple(Policy)
    r_values: Tuple[int, ...] = ()
    sp: SpValue = "auto"
    seed: int = 0
    outputs: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.r_values:
            object.__setattr__(self, "r_values", (self.model.R,))
        object.__setattr__(self, "policies", tuple(Policy(p) for p in self.policies))
        object.__setattr__(self, "r_values", tuple(int(r) for r in self.r_values))

    def configs(self) -> List[ModelConfig]:
        return [self.model.replace(R=r) for r in self.r_values]


# -- parsing -----------------------------------------------------------------


class _Marks:
    """Line numbers of mapping keys, addressed by dotted path."""

    def __init__(self, node: Optional[yaml.Node]):
        self.lines: Dict[str, int] = {}
        if node is not None:
            self._walk(node, "")

    def _walk(self, node, prefix):
        self.lines.setdefault(prefix or "<root>", node.start_mark.line + 1)
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                path = f"{prefix}.{k.value}" if prefix else str(k.value)
                self.lines[path] = k.start_mark.line + 1
                self._walk(v, path)

    def where(self, path: str) -> str:
        probe = path
        while probe and probe not in self.lines:
            probe = probe.rpartition(".")[0]
        line = self.lines.get(probe or "<root>")
        return f"{path} (line {line})" if line else path


def load_spec(path: Union[str, Path]) -> ExperimentSpec:
    path = Path(path)
    text = path.read_text()
    return parse_spec(text, source=str(path))


def parse_spec(text: str, source: str = "<string>") -> ExperimentSpec:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source} line {mark.line + 1}" if mark else source
        raise SpecError([(where, f"parse error: {getattr(exc, 'problem', exc)}")]) from None
    marks = _Marks(node)
    if not isinstance(data, dict):
        raise SpecError([(source, "top level must be a mapping")])
    problems: List[Tuple[str, str]] = []

    def bad(key, msg):
        problems.append((marks.where(key), msg))

    for key in data:
        if key not in TOP_KEYS:
            bad(str(key), f"unknown key; expected one of {', '.join(TOP_KEYS)}")
    model = _parse_model(data.get("model"), bad)
    profile = _parse_profile(data.get("profile"), bad)

    policies: Tuple[Policy, ...] = tuple(Policy)
    if "policies" in data:
        raw = data["policies"]
        if isinstance(raw, str):
            raw = [raw]
        try:
            policies = tuple(Policy(str(p).upper()) for p in raw)
        except (ValueError, TypeError):
            bad("policies", f"unknown policy in {raw!r}; have {[p.value for p in Policy]}")
        if not policies:
            bad("policies", "needs at least one policy")

    r_values: Tuple[int, ...] = ()
    if "r_values" in data:
        raw = data["r_values"]
        raw = [raw] if isinstance(raw, int) else raw
        if not isinstance(raw, list) or not all(_is_int(r) and r >= 1 for r in raw) or not raw:
            bad("r_values", "must be a list of positive integers")
        else:
            r_values = tuple(raw)

    sp = data.get("sp", "auto")
    if sp is None:
        if any(p.chunks_ar for p in policies):
            bad("sp", "chunked all-reduce policies need a byte count or 'auto'")
    elif isinstance(sp, str):
        if sp != "auto":
            bad("sp", "must be a positive byte count or 'auto'")
    elif not (_is_int(sp) and sp >= 1):
        bad("sp", "must be a positive byte count or 'auto'")

    seed = data.get("seed", 0)
    if not _is_int(seed):
        bad("seed", "must be an integer")

    outputs = data.get("outputs") or {}
    if not isinstance(outputs, dict) or not all(isinstance(v, str) for v in outputs.values()):
        bad("outputs", "must map output names to paths")
        outputs = {}

    if sp == "auto" and not problems and not any(p.chunks_ar for p in policies):
        bad("sp", "'auto' needs a policy with chunked all-reduce; "
            f"{', '.join(p.value for p in policies)} have no chunks to tune")

    if model is not None and not problems:
        for r in r_values or (model.R,):
            for fname, msg in validate(model.replace(R=r)):
                bad("r_values" if fname in ("R", "B", "N") and r != model.R else f"model.{fname}", msg)
    if problems:
        raise SpecError(problems)
    return ExperimentSpec(model, profile, policies, r_values, sp, int(seed), dict(outputs))


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _parse_model(raw, bad) -> Optional[ModelConfig]:
    if raw is None:
        bad("model", "missing; give a preset name or a mapping of model fields")
        return None
    if isinstance(raw, str):
        raw = {"preset": raw}
    if not isinstance(raw, dict):
        bad("model", "must be a preset name or a mapping")
        return None
    values: Dict[str, Any] = {}
    preset = raw.get("preset")
    if preset is not None:
        if str(preset).lower() not in MODEL_NAMES:
            bad("model.preset", f"unknown preset {preset!r}; have {', '.join(MODEL_NAMES)}")
            return None
        # E/P of the preset row carries over to the requested P
        P = raw.get("P")
        base = model_preset(str(preset), P=P) if _is_int(P) and P >= 1 else model_preset(str(preset))
        values = {f: getattr(base, f) for f in MODEL_FIELDS}
    ok = True
    for key, v in raw.items():
        if key == "preset":
            continue
        if key not in MODEL_FIELDS:
            bad(f"model.{key}", f"unknown model field; have {', '.join(MODEL_FIELDS)}")
            ok = False
        elif key == "f":
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                bad("model.f", "must be a number")
                ok = False
            else:
                values[key] = float(v)
        elif not _is_int(v):
            bad(f"model.{key}", "must be an integer")
            ok = False
        else:
            values[key] = v
    missing = [f for f in MODEL_FIELDS if f not in values and f not in ("R", "bytes_per_param")]
    for f in missing:
        bad(f"model.{f}", "missing")
    if missing or not ok:
        return None
    model = ModelConfig(**values)
    for fname, msg in validate(model):
        bad(f"model.{fname}", msg)
        ok = False
    return model if ok else None


def _parse_profile(raw, bad) -> Optional[HardwareProfile]:
    if raw is None:
        bad("profile", "missing; give a preset name or a mapping of profile fields")
        return None
    if isinstance(raw, str):
        raw = {"preset": raw}
    if not isinstance(raw, dict):
        bad("profile", "must be a preset name or a mapping")
        return None
    values: Dict[str, Any] = {}
    preset = raw.get("preset")
    if preset is not None:
        if str(preset).lower() not in PROFILE_NAMES:
            bad("profile.preset", f"unknown preset {preset!r}; have {', '.join(PROFILE_NAMES)}")
            return None
        base = profile_preset(str(preset))
        values = {f: getattr(base, f) for f in PROFILE_FIELDS}
        values["overrides"] = dict(base.overrides)
    ok = True
    for key, v in raw.items():
        if key == "preset":
            continue
        if key == "overrides":
            parsed = _parse_overrides(v, bad)
            if parsed is None:
                ok = False
            else:
                values["overrides"] = parsed
        elif key == "compute_scale":
            if not isinstance(v, list) or not all(_is_num(x) for x in v):
                bad("profile.compute_scale", "must be a list of numbers")
                ok = False
            else:
                values[key] = tuple(float(x) for x in v)
        elif key not in PROFILE_FIELDS:
            bad(f"profile.{key}", f"unknown profile field; have {', '.join(PROFILE_FIELDS + ('overrides',))}")
            ok = False
        elif not _is_num(v):
            bad(f"profile.{key}", "must be a number")
            ok = False
        else:
            values[key] = float(v)
    missing = [f for f in ("flops_per_us", "bw_bytes_per_us") if f not in values]
    for f in missing:
        bad(f"profile.{f}", "missing")
    if missing or not ok:
        return None
    try:
        return HardwareProfile(**values)
    except (CostError, ConfigError, ValueError) as exc:
        bad("profile", str(exc))
        return None


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _parse_overrides(raw, bad) -> Optional[Dict[Tuple[TaskKind, Phase], float]]:
    if not isinstance(raw, dict):
        bad("profile.overrides", "must map KIND/PHASE to microseconds")
        return None
    out = {}
    for key, v in raw.items():
        kind, _, phase = str(key).partition("/")
        try:
            k = (TaskKind(kind.upper()), Phase(phase.upper()))
        except ValueError:
            bad(f"profile.overrides.{key}", "key must look like AT/FORWARD")
            return None
        if not _is_num(v):
            bad(f"profile.overrides.{key}", "must be a number")
            return None
        out[k] = float(v)
    return out


# -- writing -----------------------------------------------------------------


def spec_to_dict(spec: ExperimentSpec) -> Dict[str, Any]:
    m = spec.model
    p = spec.profile
    profile: Dict[str, Any] = {f: getattr(p, f) for f in PROFILE_FIELDS}
    profile["compute_scale"] = list(p.compute_scale)
    if p.overrides:
        profile["overrides"] = {f"{k.value}/{ph.value}": v for (k, ph), v in sorted(
            p.overrides.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value))}
    out: Dict[str, Any] = {
        "model": {f: getattr(m, f) for f in MODEL_FIELDS},
        "profile": profile,
        "policies": [pol.value for pol in spec.policies],
        "r_values": list(spec.r_values),
        "sp": spec.sp,
        "seed": spec.seed,
    }
    if spec.outputs:
        out["outputs"] = dict(spec.outputs)
    return out


def dump_spec(spec: ExperimentSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False)


def write_spec(spec: ExperimentSpec, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_text(dump_spec(spec))
    return path


# -- traces ------------------------------------------------------------------


def trace_events(timeline: Timeline, workers: Iterable[int] = (0,)) -> List[Dict[str, Any]]:
    g = timeline.graph
    events = []
    for w in workers:
        for t in g.tasks:
            events.append({
                "name": t.label,
                "ph": "X",
                "pid": w,
                "tid": int(t.kind.resource),
                "ts": timeline.start[t.id],
                "dur": timeline.end[t.id] - timeline.start[t.id],
                "args": {
                    "kind": t.kind.value,
                    "block": t.block,
                    "micro": t.micro,
                    "phase": t.phase.value,
                    "bytes": t.payload_bytes,
                },
            })
    events.sort(key=lambda e: (e["pid"], e["ts"], e["tid"], e["name"]))
    return events


def trace_json(timeline: Timeline, all_workers: bool = False) -> str:
    workers = range(timeline.graph.config.P) if all_workers else (0,)
    events = trace_events(timeline, workers)
    if not events:
        return "[]"
    return "[\n" + ",\n".join(json.dumps(e, sort_keys=False) for e in events) + "\n]\n"


def export_trace(timeline: Timeline, path: Union[str, Path], all_workers: bool = False) -> Path:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_text(trace_json(timeline, all_workers))
    return path


# -- reports -----------------------------------------------------------------


def format_rows(rows: Sequence[Mapping[str, Any]], fmt: str = "table") -> str:
    """Render report rows as an aligned table, CSV or JSON."""
    if fmt == "json":
        return json.dumps(list(rows), indent=2) + "\n"
    if not rows:
        return ""
    cols = list(rows[0])
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    if fmt != "table":
        raise ValueError(f"unknown format {fmt!r}")
    cells = [[_cell(r[c]) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.rjust(w) if _numeric(v) else v.ljust(w) for v, w in zip(row, widths)).rstrip()
              for row in cells]
    return "\n".join(lines) + "\n"


def _cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def _numeric(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False
