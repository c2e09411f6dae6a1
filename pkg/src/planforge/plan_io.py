"""Parsers and renderers for the three planner dialects.

spine       -- JSON response carrying a bracketed action-call list
saycan      -- line-oriented `robot.pick_and_place(a, b)` scripts ending in done()
llm_planner -- comma-separated `Verb Object [Object]` sub-goal strings

Parsing is lenient (markdown fences, single-quoted pseudo-JSON, stray
whitespace, verb aliases); rendering is canonical. parse_response is total:
every input yields a PlannerResponse or raises ParseError, nothing else.
Grammar reference: docs/grammar.md.
"""
from __future__ import annotations

import ast
import json
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources

from .errors import ParseError

DIALECTS = ("spine", "saycan", "llm_planner")

# arity -> (min_args, max_args); None = unbounded
SPINE_ACTIONS = {
    "goto": (1, 1),
    "map_region": (1, 1),
    "explore_region": (2, 2),
    "inspect": (2, 2),
    "answer": (1, 1),
}

LLM_PLANNER_VERBS = (
    "Navigation",
    "PickupObject",
    "PutObject",
    "OpenObject",
    "CloseObject",
    "ToggleObjectOn",
    "ToggleObjectOff",
    "SliceObject",
)
# tolerated spellings -> canonical verb
_VERB_ALIASES = {
    "pickobject": "PickupObject",
    "toggleonobject": "ToggleObjectOn",
    "toggleoffobject": "ToggleObjectOff",
}
_VERB_LOOKUP = {v.lower(): v for v in LLM_PLANNER_VERBS} | _VERB_ALIASES


@dataclass(frozen=True)
class ActionCall:
    name: str
    args: tuple[str, ...] = ()

    def render(self, dialect: str = "spine") -> str:
        if dialect == "saycan":
            if self.name == "done":
                return "done()"
            return f"robot.{self.name}({', '.join(self.args)})"
        if dialect == "llm_planner":
            return " ".join((self.name,) + self.args)
        return f"{self.name}({', '.join(self.args)})"


@dataclass
class PlannerResponse:
    dialect: str
    plan: list[ActionCall]
    raw: str
    primary_goal: str | None = None
    relevant_graph: str | None = None
    reasoning: str | None = None
    extras: dict = field(default_factory=dict)


def parse_response(raw: str, dialect: str) -> PlannerResponse:
    """Parse a planner message into a structured response.

    Raises ParseError (with character offset and expected-token hint) on any
    malformed input; the error text doubles as corrective feedback.
    """
    if dialect not in DIALECTS:
        raise ParseError(0, f"one of {DIALECTS}", f"unknown dialect {dialect!r}")
    if not isinstance(raw, str):
        raise ParseError(0, "text")
    try:
        if dialect == "spine":
            return _parse_spine(raw)
        if dialect == "saycan":
            return _parse_saycan(raw)
        return _parse_llm_planner(raw)
    except ParseError:
        raise
    except RecursionError:
        raise ParseError(0, "shallower nesting") from None
    except Exception as exc:  # totality: no other exception escapes
        raise ParseError(0, "well-formed response", f"{type(exc).__name__}: {exc}") from None


def render_response(resp: PlannerResponse) -> str:
    """Canonical textual form; the fine-tuning target for assistant turns."""
    if resp.dialect == "spine":
        body = {}
        if resp.primary_goal is not None:
            body["primary_goal"] = resp.primary_goal
        if resp.relevant_graph is not None:
            body["relevant_graph"] = resp.relevant_graph
        if resp.reasoning is not None:
            body["reasoning"] = resp.reasoning
        body["plan"] = "[" + ", ".join(c.render("spine") for c in resp.plan) + "]"
        return json.dumps(body, ensure_ascii=False)
    if resp.dialect == "saycan":
        return "\n".join(c.render("saycan") for c in resp.plan)
    return ", ".join(c.render("llm_planner") for c in resp.plan)


# -- shared scanning helpers --------------------------------------------------

def _strip_code_fence(raw: str) -> tuple[str, int]:
    """Return (content, offset_of_content) with a leading markdown fence removed."""
    idx = raw.find("```")
    if idx < 0:
        return raw, 0
    start = raw.find("\n", idx)
    if start < 0:
        return raw, 0
    end = raw.find("```", start)
    if end < 0:
        return raw[start + 1 :], start + 1
    return raw[start + 1 : end], start + 1


def _balanced_spans(text: str) -> list[tuple[int, int]]:
    """(open, close) index pairs for every balanced {...} span, one string-aware pass."""
    spans: list[tuple[int, int]] = []
    stack: list[int] = []
    quote: str | None = None
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if quote is not None:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "{":
            stack.append(i)
        elif ch == "}" and stack:
            spans.append((stack.pop(), i + 1))
        i += 1
    spans.sort()
    return spans


# parse attempts per message are bounded so adversarial brace storms stay linear
_MAX_OBJECT_CANDIDATES = 16


def extract_json_object(raw: str) -> tuple[dict, int]:
    """First balanced top-level JSON (or python-literal) object in `raw`.

    Tolerates markdown fences, leading prose, and single-quoted dicts.
    Returns the parsed object and its character offset in the original text.
    """
    content, base = _strip_code_fence(raw)
    for attempts, (start, end) in enumerate(_balanced_spans(content)):
        if attempts >= _MAX_OBJECT_CANDIDATES:
            break
        candidate = content[start:end]
        try:
            obj = json.loads(candidate)
        except Exception:
            obj = None
        if obj is None and "'" in candidate:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")  # bad escapes in noisy model output
                    obj = ast.literal_eval(candidate)
            except Exception:
                obj = None
        if isinstance(obj, dict):
            return obj, base + start
    raise ParseError(0, "a JSON object", "no parseable object found")


def _split_top_level(text: str, sep: str = ",") -> list[str]:
    parts: list[str] = []
    depth = 0
    buf: list[str] = []
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == sep and depth == 0:
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    parts.append("".join(buf))
    return parts


# -- spine ---------------------------------------------------------------------

# a close-paren followed by another action call inside a greedy answer message
# means the planner kept acting after answer; the plan invariant forbids that
_ANSWER_TRAILING_CALL = re.compile(
    r"\)\s*,\s*(?:goto|map_region|explore_region|inspect|answer)\s*\("
)


def parse_action_list(text: str, offset: int = 0) -> list[ActionCall]:
    """Parse a spine plan string: `[call, call, ...]` or bare calls.

    `answer(...)` keeps nested commas and parens: its argument runs to the
    last closing paren of the plan. `inspect(node, query)` splits only on the
    first comma so queries may contain commas.
    """
    s = text.strip()
    pos_base = offset + (len(text) - len(text.lstrip()))
    if s.startswith("[") and s.endswith("]"):
        s = s[1:-1]
        pos_base += 1
    calls: list[ActionCall] = []
    i = 0
    n = len(s)
    while True:
        while i < n and s[i] in " \t\r\n,":
            i += 1
        if i >= n:
            break
        start = i
        while i < n and (s[i].isalnum() or s[i] == "_"):
            i += 1
        name = s[start:i]
        if not name:
            raise ParseError(pos_base + i, "an action name")
        if name not in SPINE_ACTIONS:
            raise ParseError(pos_base + start, "a known action", f"got {name!r}")
        if i >= n or s[i] != "(":
            raise ParseError(pos_base + i, "'('", f"after {name}")
        i += 1
        if name == "answer":
            close = s.rfind(")")
            if close < i:
                raise ParseError(pos_base + i, "')'", "unterminated answer(...)")
            message = s[i:close].strip()
            tail = s[close + 1 :].strip(" \t\r\n,")
            if tail or _ANSWER_TRAILING_CALL.search(message):
                raise ParseError(pos_base + close + 1, "end of plan", "answer must be last")
            calls.append(ActionCall("answer", (message,)))
            return calls
        # find this call's closing paren at depth 0
        depth = 1
        j = i
        while j < n and depth:
            if s[j] == "(":
                depth += 1
            elif s[j] == ")":
                depth -= 1
            j += 1
        if depth:
            raise ParseError(pos_base + n, "')'", f"unterminated {name}(...)")
        argtext = s[i : j - 1]
        if name == "inspect":
            comma = argtext.find(",")
            if comma < 0:
                raise ParseError(pos_base + i, "','", "inspect takes (node, query)")
            args = [argtext[:comma].strip(), argtext[comma + 1 :].strip()]
        else:
            args = [a.strip() for a in _split_top_level(argtext)] if argtext.strip() else []
        lo, hi = SPINE_ACTIONS[name]
        if not (lo <= len(args) <= hi):
            raise ParseError(
                pos_base + start, f"{lo} argument(s) to {name}", f"got {len(args)}"
            )
        if name == "explore_region":
            try:
                radius = float(args[1])
            except ValueError:
                raise ParseError(
                    pos_base + i, "a numeric exploration radius", f"got {args[1]!r}"
                ) from None
            args[1] = _render_number(radius)
        if any(not a for a in args):
            raise ParseError(pos_base + start, "non-empty arguments")
        calls.append(ActionCall(name, tuple(args)))
        i = j
    if not calls:
        raise ParseError(pos_base, "at least one action")
    return calls


def _render_number(value: float) -> str:
    return str(int(value)) + ".0" if float(value).is_integer() else repr(float(value))


def _parse_spine(raw: str) -> PlannerResponse:
    obj, offset = extract_json_object(raw)
    if "plan" not in obj:
        raise ParseError(offset, "a 'plan' key")
    plan_val = obj["plan"]
    if isinstance(plan_val, list):
        plan_text = "[" + ", ".join(str(p) for p in plan_val) + "]"
    elif isinstance(plan_val, str):
        plan_text = plan_val
    else:
        raise ParseError(offset, "plan as string or list")
    calls = parse_action_list(plan_text, offset)
    terminal = [k for k, c in enumerate(calls) if c.name == "answer"]
    if terminal and terminal[0] != len(calls) - 1:
        raise ParseError(offset, "answer as the final action")

    def _opt(key: str) -> str | None:
        val = obj.get(key)
        return val if isinstance(val, str) else None

    return PlannerResponse(
        dialect="spine",
        plan=calls,
        raw=raw,
        primary_goal=_opt("primary_goal"),
        relevant_graph=_opt("relevant_graph"),
        reasoning=_opt("reasoning"),
    )


# -- saycan ---------------------------------------------------------------------

def _parse_saycan(raw: str) -> PlannerResponse:
    content, base = _strip_code_fence(raw)
    calls: list[ActionCall] = []
    offset = base
    for line in content.splitlines(keepends=True):
        stripped = line.strip()
        line_off = offset + (len(line) - len(line.lstrip()))
        offset += len(line)
        if not stripped or stripped.startswith("#") or stripped.startswith("objects"):
            continue
        body = stripped.removeprefix("robot.")
        if body in ("done()", "done ()"):
            calls.append(ActionCall("done"))
            continue
        if not body.startswith("pick_and_place"):
            raise ParseError(line_off, "robot.pick_and_place(...) or done()", stripped[:40])
        open_p = body.find("(")
        close_p = body.rfind(")")
        if open_p < 0 or close_p < open_p:
            raise ParseError(line_off, "'(' ... ')'", stripped[:40])
        args = [a.strip() for a in body[open_p + 1 : close_p].split(",")]
        if len(args) != 2 or not all(args):
            raise ParseError(line_off, "two arguments to pick_and_place", stripped[:40])
        if calls and calls[-1].name == "done":
            raise ParseError(line_off, "no actions after done()")
        calls.append(ActionCall("pick_and_place", tuple(args)))
    if not calls:
        raise ParseError(0, "at least one action line")
    return PlannerResponse(dialect="saycan", plan=calls, raw=raw)


# -- llm_planner ------------------------------------------------------------------

def _subgoal_from_text(text: str, offset: int) -> ActionCall:
    tokens = text.split()
    if not tokens:
        raise ParseError(offset, "a sub-goal")
    verb = _VERB_LOOKUP.get(tokens[0].lower())
    if verb is None:
        raise ParseError(offset, "a known sub-goal verb", f"got {tokens[0]!r}")
    args = tokens[1:]
    lo, hi = (1, 2) if verb == "PutObject" else (1, 1)
    if not (lo <= len(args) <= hi):
        raise ParseError(offset, f"{lo}-{hi} object(s) after {verb}", f"got {len(args)}")
    return ActionCall(verb, tuple(args))


def _parse_llm_planner(raw: str) -> PlannerResponse:
    extras: dict = {}
    items: list[str] | None = None
    stripped = raw.strip()
    if stripped.startswith("{"):
        try:
            obj, _ = extract_json_object(raw)
        except ParseError:
            obj = None
        if obj is not None:
            for key in ("Next Plans", "next_plans", "initial_high_level_plans", "plan"):
                if isinstance(obj.get(key), list):
                    items = [str(p) for p in obj[key]]
                    extras = {k: v for k, v in obj.items() if k != key}
                    break
            if items is None:
                raise ParseError(0, "a sub-goal list key")
    if items is None:
        content, _ = _strip_code_fence(raw)
        items = [p for p in content.split(",")]
    calls: list[ActionCall] = []
    offset = 0
    for item in items:
        text = item.strip()
        if text:
            calls.append(_subgoal_from_text(text, offset))
        offset += len(item) + 1
    if not calls:
        raise ParseError(0, "at least one sub-goal")
    return PlannerResponse(dialect="llm_planner", plan=calls, raw=raw, extras=extras)


# -- prompt templates -------------------------------------------------------------

def _load_asset(name: str) -> str:
    return (resources.files("planforge") / "assets" / "prompts" / name).read_text(
        encoding="utf-8"
    )


def planner_system_prompt(dialect: str) -> str:
    if dialect not in DIALECTS:
        raise ParseError(0, f"one of {DIALECTS}", f"unknown dialect {dialect!r}")
    return _load_asset(f"planner_{dialect}.txt")


def render_system_prompt(dialect: str, task: str) -> list[dict[str, str]]:
    """System message seeding a planner episode; the task rides in the system turn
    so user turns carry observations only."""
    template = planner_system_prompt(dialect)
    return [{"role": "system", "content": template.replace("<TASK>", task)}]
