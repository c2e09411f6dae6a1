"""Deterministic closed-loop world emulator.

Applies parsed planner actions to a WorldState and emits ObservationDelta
messages in the dialect's update syntax. Infeasible or malformed actions
never raise: they come back as `feedback` deltas so the planner can re-plan,
and they leave the world untouched (the frame property).

The textual delta grammar (the wire format between emulator and planner) is
documented in docs/grammar.md; reveal/move/attribute deltas round-trip
through parse_observation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

from .envs import (
    Edge,
    Environment,
    ObjectSetEnv,
    SceneGraph,
    canonical_edge,
    nodes_within_radius,
    reachable_regions,
    shortest_region_path,
)
from .errors import ParseError
from .plan_io import ActionCall, _split_top_level

NAMED_POSITIONS = frozenset({"middle", "table", "left", "right", "top", "bottom"})

_SPINE_INFEASIBLE_UNREVEALED = "unknown or unrevealed region {name}"


def _load_capabilities() -> dict[str, set[str]]:
    raw = json.loads(
        (resources.files("planforge") / "assets" / "alfred_capabilities.json").read_text(
            encoding="utf-8"
        )
    )
    return {k: {v.lower() for v in vals} for k, vals in raw.items() if k != "_comment"}


CAPABILITIES = _load_capabilities()


@dataclass(frozen=True)
class ObservationDelta:
    """One world-update message. `rendered` is what the planner reads."""

    kind: str  # reveal | move | attribute | feedback | terminal
    payload: dict
    rendered: str


@dataclass
class WorldState:
    """Full environment plus the planner-visible portion and robot state.

    `step_count` counts planner turns and is advanced by the episode loop,
    not by apply_action, so infeasible actions leave the state untouched
    while still consuming budget at the loop level.
    """

    dialect: str
    full: Environment
    # scene-graph dialect
    revealed_nodes: set[str] = field(default_factory=set)
    revealed_region_edges: set[Edge] = field(default_factory=set)
    revealed_object_edges: set[Edge] = field(default_factory=set)
    robot_location: str = ""
    inspected: dict[str, str] = field(default_factory=dict)
    visited: tuple[str, ...] = ()
    # object-set dialects
    visible_objects: tuple[str, ...] = ()
    placements: dict[str, str] = field(default_factory=dict)
    held: str | None = None
    open_set: set[str] = field(default_factory=set)
    on_set: set[str] = field(default_factory=set)
    sliced_set: set[str] = field(default_factory=set)
    # lifecycle
    terminated: bool = False
    terminal_kind: str | None = None  # answered | done
    answer_message: str | None = None
    step_count: int = 0

    def copy(self) -> "WorldState":
        return replace(
            self,
            revealed_nodes=set(self.revealed_nodes),
            revealed_region_edges=set(self.revealed_region_edges),
            revealed_object_edges=set(self.revealed_object_edges),
            inspected=dict(self.inspected),
            placements=dict(self.placements),
            open_set=set(self.open_set),
            on_set=set(self.on_set),
            sliced_set=set(self.sliced_set),
        )


def world_from_visible(
    dialect: str,
    full: Environment,
    visible: Environment,
) -> WorldState:
    """Seed a WorldState whose revealed portion equals a visible sub-environment."""
    if isinstance(full, SceneGraph):
        assert isinstance(visible, SceneGraph)
        return WorldState(
            dialect=dialect,
            full=full,
            revealed_nodes={n.name for n in visible.regions} | {n.name for n in visible.objects},
            revealed_region_edges={canonical_edge(*e) for e in visible.region_edges},
            revealed_object_edges=set(visible.object_edges),
            robot_location=visible.robot_location,
            visited=(visible.robot_location,),
        )
    assert isinstance(visible, ObjectSetEnv)
    return WorldState(
        dialect=dialect,
        full=full,
        visible_objects=tuple(visible.objects),
        placements=dict(full.placements),
    )


def is_terminal(w: WorldState, max_iterations: int | None = None) -> bool:
    if w.terminated:
        return True
    return max_iterations is not None and w.step_count >= max_iterations


def remaining_budget(w: WorldState, max_iterations: int) -> int:
    return max(0, max_iterations - w.step_count)


def mark_complete(w: WorldState) -> WorldState:
    """End-of-plan completion for dialects without an explicit done action."""
    out = w.copy()
    out.terminated = True
    out.terminal_kind = "done"
    return out


def _feedback(message: str) -> ObservationDelta:
    return ObservationDelta("feedback", {"message": message}, message)


def _infeasible(reason: str) -> ObservationDelta:
    return _feedback(f"InfeasibleAction: {reason}")


def _malformed(reason: str) -> ObservationDelta:
    return _feedback(f"MalformedAction: {reason}")


def apply_action(w: WorldState, a: ActionCall) -> tuple[WorldState, ObservationDelta]:
    """Apply one action; pure in (state, action).

    Feasible actions return a fresh state and a reveal/move/attribute/terminal
    delta; infeasible or malformed ones return the input state unchanged with
    a feedback delta.
    """
    if w.terminated:
        return w, _infeasible("the episode has already terminated")
    if w.dialect == "spine":
        return _apply_spine(w, a)
    if w.dialect == "saycan":
        return _apply_saycan(w, a)
    if w.dialect == "llm_planner":
        return _apply_llm_planner(w, a)
    return w, _malformed(f"unknown dialect {w.dialect!r}")


# -- spine ----------------------------------------------------------------------

def _spine_can_reach(w: WorldState, region: str) -> bool:
    g = w.full
    assert isinstance(g, SceneGraph)
    if region not in w.revealed_nodes or region not in g.region_names():
        return False
    return region in reachable_regions(g, w.robot_location, w.revealed_region_edges)


def _reveal_nodes(
    w: WorldState, names: set[str]
) -> list[dict]:
    """Mark nodes revealed; return render payloads for the newly revealed ones."""
    g = w.full
    assert isinstance(g, SceneGraph)
    added = []
    regions = g.region_names()
    for name in sorted(names):
        if name in w.revealed_nodes:
            continue
        node = g.node(name)
        if node is None:
            continue
        w.revealed_nodes.add(name)
        added.append(
            {
                "name": name,
                "coords": node.coords,
                "type": "region" if name in regions else "object",
                "description": node.description,
            }
        )
    return added


def _apply_spine(w: WorldState, a: ActionCall) -> tuple[WorldState, ObservationDelta]:
    g = w.full
    assert isinstance(g, SceneGraph)
    name = a.name

    if name == "answer":
        if len(a.args) != 1:
            return w, _malformed("answer takes one message argument")
        out = w.copy()
        out.terminated = True
        out.terminal_kind = "answered"
        out.answer_message = a.args[0]
        return out, ObservationDelta(
            "terminal", {"message": a.args[0], "terminal": "answered"}, "task terminated"
        )

    if name not in ("goto", "map_region", "explore_region", "inspect"):
        return w, _malformed(f"unknown action {name!r} for the scene-graph dialect")

    if name == "goto":
        if len(a.args) != 1:
            return w, _malformed("goto takes one region argument")
        target = a.args[0]
        if not _spine_can_reach(w, target):
            return w, _infeasible(_SPINE_INFEASIBLE_UNREVEALED.format(name=target))
        out = w.copy()
        moved = out.robot_location != target
        out.robot_location = target
        if moved:
            out.visited = out.visited + (target,)
        payload = _spine_payload(robot=target if moved else None)
        return out, _render_spine_delta(payload)

    if name in ("map_region", "explore_region"):
        radius: float | None = None
        if name == "map_region":
            if len(a.args) != 1:
                return w, _malformed("map_region takes one region argument")
        else:
            if len(a.args) != 2:
                return w, _malformed("explore_region takes (region, radius)")
            try:
                radius = float(a.args[1])
            except ValueError:
                return w, _malformed(f"exploration radius must be numeric, got {a.args[1]!r}")
            if radius < 0:
                return w, _infeasible("exploration radius must be non-negative")
        target = a.args[0]
        if not _spine_can_reach(w, target):
            return w, _infeasible(_SPINE_INFEASIBLE_UNREVEALED.format(name=target))

        out = w.copy()
        moved = out.robot_location != target
        out.robot_location = target
        if moved:
            out.visited = out.visited + (target,)

        to_reveal: set[str] = set()
        new_region_edges: set[Edge] = set()
        new_object_edges: set[Edge] = set()
        # mapping reveals everything incident to the target region
        for o, r in g.object_edges:
            if r == target:
                to_reveal.add(o)
                new_object_edges.add((o, r))
        for e in g.region_edges:
            if target in e:
                to_reveal.add(e[0] if e[1] == target else e[1])
                new_region_edges.add(canonical_edge(*e))
        if radius is not None:
            within = nodes_within_radius(g, target, radius)
            to_reveal |= within
            # newly revealed nodes expose their edges to anything now revealed
            now_revealed = w.revealed_nodes | to_reveal | {target}
            fresh = to_reveal - w.revealed_nodes
            for o, r in g.object_edges:
                if (o in fresh or r in fresh) and o in now_revealed and r in now_revealed:
                    new_object_edges.add((o, r))
            for e in g.region_edges:
                if (e[0] in fresh or e[1] in fresh) and set(e) <= now_revealed:
                    new_region_edges.add(canonical_edge(*e))

        added_nodes = _reveal_nodes(out, to_reveal)
        added_edges = []
        for e in sorted(new_region_edges):
            if e not in out.revealed_region_edges:
                out.revealed_region_edges.add(e)
                added_edges.append(e)
        for e in sorted(new_object_edges, key=lambda p: canonical_edge(*p)):
            if e not in out.revealed_object_edges:
                out.revealed_object_edges.add(e)
                added_edges.append(canonical_edge(*e))
        target_node = g.node(target)
        attrs = []
        if target_node is not None and target_node.description:
            attrs.append({"name": target, "description": target_node.description})
        payload = _spine_payload(
            nodes=added_nodes,
            connections=sorted(set(added_edges)),
            robot=target if moved else None,
            attributes=attrs,
        )
        return out, _render_spine_delta(payload)

    # inspect(object, query)
    if len(a.args) != 2:
        return w, _malformed("inspect takes (object, query)")
    obj = a.args[0]
    if obj not in w.revealed_nodes or obj not in g.object_names():
        return w, _infeasible(f"unknown or unrevealed object {obj}")
    anchors = sorted(r for o, r in w.revealed_object_edges if o == obj)
    reachable = [r for r in anchors if _spine_can_reach(w, r)]
    if not reachable:
        return w, _infeasible(f"no reachable region with visibility of {obj}")
    # closest anchor by revealed-path length, ties by name
    def _dist(region: str) -> int:
        path = shortest_region_path(g, w.robot_location, region, w.revealed_region_edges)
        return len(path) if path else 1 << 30

    dest = min(reachable, key=lambda r: (_dist(r), r))
    out = w.copy()
    moved = out.robot_location != dest
    out.robot_location = dest
    if moved:
        out.visited = out.visited + (dest,)
    node = g.node(obj)
    desc = (node.description if node else None) or "no additional attributes observed"
    out.inspected[obj] = desc
    payload = _spine_payload(
        robot=dest if moved else None,
        attributes=[{"name": obj, "description": desc}],
    )
    return out, _render_spine_delta(payload)


def _spine_payload(
    nodes: list[dict] | None = None,
    connections: list[Edge] | None = None,
    robot: str | None = None,
    attributes: list[dict] | None = None,
) -> dict:
    return {
        "added_nodes": nodes or [],
        "added_connections": [list(e) for e in (connections or [])],
        "robot_location": robot,
        "attributes": attributes or [],
    }


def _render_float(v: float) -> str:
    return str(float(v))


def _render_node_entry(node: dict) -> str:
    parts = [
        f"coords: [{_render_float(node['coords'][0])}, {_render_float(node['coords'][1])}]",
        f"type: {node['type']}",
    ]
    if node.get("description"):
        parts.append(f"description: {node['description']}")
    parts.append(f"name: {node['name']}")
    return "{%s: {%s}}" % (node["name"], ", ".join(parts))


def _render_spine_delta(payload: dict) -> ObservationDelta:
    calls = []
    if payload["added_nodes"]:
        calls.append(
            "add_nodes(%s)" % ", ".join(_render_node_entry(n) for n in payload["added_nodes"])
        )
    if payload["added_connections"]:
        calls.append(
            "add_connections(%s)"
            % ", ".join("[%s, %s]" % (a, b) for a, b in payload["added_connections"])
        )
    if payload["robot_location"]:
        calls.append("update_robot_location(%s)" % payload["robot_location"])
    for attr in payload["attributes"]:
        calls.append(
            "update_node_attributes({name: %s, description: %s})"
            % (attr["name"], attr["description"])
        )
    rendered = ",\n".join(calls)
    has_reveal = bool(payload["added_nodes"] or payload["added_connections"])
    if has_reveal:
        kind = "reveal"
    elif payload["attributes"]:
        kind = "attribute"
    else:
        kind = "move"
    return ObservationDelta(kind, payload, rendered)


# -- saycan ---------------------------------------------------------------------

def _apply_saycan(w: WorldState, a: ActionCall) -> tuple[WorldState, ObservationDelta]:
    env = w.full
    assert isinstance(env, ObjectSetEnv)
    if a.name == "done":
        out = w.copy()
        out.terminated = True
        out.terminal_kind = "done"
        return out, ObservationDelta("terminal", {"terminal": "done"}, "task terminated")
    if a.name != "pick_and_place":
        return w, _malformed(f"unknown action {a.name!r} for the tabletop dialect")
    if len(a.args) != 2:
        return w, _malformed("pick_and_place takes (object, place)")
    obj, place = a.args
    visible = set(w.visible_objects)
    if obj not in visible:
        return w, _infeasible(f"unknown object {obj}")
    valid_places = visible | set(env.receptacles) | NAMED_POSITIONS
    if place not in valid_places:
        return w, _infeasible(f"unknown place {place}")
    if obj == place:
        return w, _infeasible(f"cannot place {obj} onto itself")
    stacked_on_obj = sorted(z for z, loc in w.placements.items() if loc == obj)
    if stacked_on_obj:
        return w, _infeasible(f"{obj} is underneath {stacked_on_obj[0]}")
    out = w.copy()
    out.placements[obj] = place
    payload = {"object": obj, "place": place}
    return out, ObservationDelta("move", payload, f"moved({obj}, {place})")


# -- llm_planner ------------------------------------------------------------------

def _apply_llm_planner(w: WorldState, a: ActionCall) -> tuple[WorldState, ObservationDelta]:
    visible = {o.lower(): o for o in w.visible_objects}

    def _check_visible(name: str) -> str | None:
        return visible.get(name.lower())

    verb = a.name
    if verb == "Navigation":
        target = _check_visible(a.args[0])
        if target is None:
            return w, _infeasible(f"{a.args[0]} is not visible")
        out = w.copy()
        out.robot_location = target
        out.visited = out.visited + (target,)
        return out, ObservationDelta("move", {"focus": target}, f"at({target})")

    if verb == "PickupObject":
        target = _check_visible(a.args[0])
        if target is None:
            return w, _infeasible(f"{a.args[0]} is not visible")
        if target.lower() not in CAPABILITIES["pickupable"]:
            return w, _infeasible(f"{target} cannot be picked up")
        if w.held is not None:
            return w, _infeasible(f"already holding {w.held}")
        out = w.copy()
        out.held = target
        out.placements.pop(target, None)
        return out, ObservationDelta("attribute", {"holding": target}, f"holding({target})")

    if verb == "PutObject":
        if len(a.args) == 2:
            obj_name, recep_name = a.args
            if w.held is None or w.held.lower() != obj_name.lower():
                return w, _infeasible(f"not holding {obj_name}")
        else:
            recep_name = a.args[0]
            if w.held is None:
                return w, _infeasible("not holding anything")
            obj_name = w.held
        recep = _check_visible(recep_name)
        if recep is None:
            return w, _infeasible(f"{recep_name} is not visible")
        if recep.lower() not in CAPABILITIES["receptacles"]:
            return w, _infeasible(f"{recep} is not a receptacle")
        if recep.lower() in CAPABILITIES["openable"] and recep not in w.open_set:
            return w, _infeasible(f"{recep} is closed")
        out = w.copy()
        placed = out.held
        out.placements[placed] = recep
        out.held = None
        return out, ObservationDelta(
            "attribute", {"placed": placed, "on": recep}, f"placed({placed}, {recep})"
        )

    if verb in ("OpenObject", "CloseObject"):
        target = _check_visible(a.args[0])
        if target is None:
            return w, _infeasible(f"{a.args[0]} is not visible")
        if target.lower() not in CAPABILITIES["openable"]:
            return w, _infeasible(f"{target} cannot be opened")
        opened = target in w.open_set
        if verb == "OpenObject" and opened:
            return w, _infeasible(f"{target} is already open")
        if verb == "CloseObject" and not opened:
            return w, _infeasible(f"{target} is not open")
        out = w.copy()
        if verb == "OpenObject":
            out.open_set.add(target)
            return out, ObservationDelta("attribute", {"opened": target}, f"opened({target})")
        out.open_set.discard(target)
        return out, ObservationDelta("attribute", {"closed": target}, f"closed({target})")

    if verb in ("ToggleObjectOn", "ToggleObjectOff"):
        target = _check_visible(a.args[0])
        if target is None:
            return w, _infeasible(f"{a.args[0]} is not visible")
        if target.lower() not in CAPABILITIES["toggleable"]:
            return w, _infeasible(f"{target} cannot be toggled")
        is_on = target in w.on_set
        if verb == "ToggleObjectOn" and is_on:
            return w, _infeasible(f"{target} is already on")
        if verb == "ToggleObjectOff" and not is_on:
            return w, _infeasible(f"{target} is not on")
        out = w.copy()
        if verb == "ToggleObjectOn":
            out.on_set.add(target)
            return out, ObservationDelta(
                "attribute", {"toggled_on": target}, f"toggled_on({target})"
            )
        out.on_set.discard(target)
        return out, ObservationDelta(
            "attribute", {"toggled_off": target}, f"toggled_off({target})"
        )

    if verb == "SliceObject":
        target = _check_visible(a.args[0])
        if target is None:
            return w, _infeasible(f"{a.args[0]} is not visible")
        if target.lower() not in CAPABILITIES["sliceable"]:
            return w, _infeasible(f"{target} cannot be sliced")
        if w.held is None or w.held.lower() not in CAPABILITIES["knives"]:
            return w, _infeasible("slicing requires a held knife")
        if target in w.sliced_set:
            return w, _infeasible(f"{target} is already sliced")
        out = w.copy()
        out.sliced_set.add(target)
        return out, ObservationDelta("attribute", {"sliced": target}, f"sliced({target})")

    return w, _malformed(f"unknown sub-goal verb {verb!r}")


# -- delta grammar parsing (round-trip checks and the replay oracle) -------------

def parse_observation(text: str, dialect: str = "spine") -> dict:
    """Parse a rendered reveal/move/attribute delta back into its payload."""
    if dialect == "spine":
        return _parse_spine_observation(text)
    calls = _parse_simple_calls(text)
    if dialect == "saycan":
        merged: dict = {}
        for name, args in calls:
            if name != "moved" or len(args) != 2:
                raise ParseError(0, "moved(object, place)")
            merged = {"object": args[0], "place": args[1]}
        return merged
    payload: dict = {}
    keymap = {
        "at": "focus",
        "holding": "holding",
        "opened": "opened",
        "closed": "closed",
        "toggled_on": "toggled_on",
        "toggled_off": "toggled_off",
        "sliced": "sliced",
    }
    for name, args in calls:
        if name == "placed" and len(args) == 2:
            payload["placed"], payload["on"] = args
        elif name in keymap and len(args) == 1:
            payload[keymap[name]] = args[0]
        else:
            raise ParseError(0, "a known update call", name)
    return payload


def _parse_simple_calls(text: str) -> list[tuple[str, list[str]]]:
    calls = []
    for line in text.splitlines():
        line = line.strip().rstrip(",")
        if not line:
            continue
        open_p = line.find("(")
        if open_p < 0 or not line.endswith(")"):
            raise ParseError(0, "name(args)", line[:40])
        name = line[:open_p].strip()
        args = [a.strip() for a in line[open_p + 1 : -1].split(",")] if line[open_p + 1 : -1] else []
        calls.append((name, args))
    return calls


def _iter_update_calls(text: str):
    """Yield (name, argtext) for each top-level update call in a spine delta."""
    i = 0
    n = len(text)
    while i < n:
        while i < n and text[i] in " \t\r\n,":
            i += 1
        if i >= n:
            return
        start = i
        while i < n and (text[i].isalnum() or text[i] == "_"):
            i += 1
        name = text[start:i]
        if i >= n or text[i] != "(":
            raise ParseError(i, "'('", f"after {name!r}")
        depth = 1
        i += 1
        arg_start = i
        while i < n and depth:
            if text[i] == "(":
                depth += 1
            elif text[i] == ")":
                depth -= 1
            i += 1
        if depth:
            raise ParseError(n, "')'", f"unterminated {name}(...)")
        yield name, text[arg_start : i - 1]


def _parse_node_entry(entry: str) -> dict:
    body = entry.strip()
    if not (body.startswith("{") and body.endswith("}")):
        raise ParseError(0, "{name: {attrs}}", body[:40])
    body = body[1:-1]
    colon = body.find(":")
    if colon < 0:
        raise ParseError(0, "':' in node entry")
    name = body[:colon].strip()
    attrs = body[colon + 1 :].strip()
    if not (attrs.startswith("{") and attrs.endswith("}")):
        raise ParseError(0, "'{' attribute block", attrs[:40])
    attrs = attrs[1:-1]
    out: dict = {"name": name, "coords": None, "type": None, "description": None}
    # coords
    cstart = attrs.find("coords:")
    if cstart >= 0:
        lb = attrs.find("[", cstart)
        rb = attrs.find("]", lb)
        if lb < 0 or rb < 0:
            raise ParseError(cstart, "coords: [x, y]")
        pair = [p.strip() for p in attrs[lb + 1 : rb].split(",")]
        if len(pair) != 2:
            raise ParseError(lb, "two coordinates")
        out["coords"] = (float(pair[0]), float(pair[1]))
    tstart = attrs.find("type:")
    if tstart >= 0:
        rest = attrs[tstart + len("type:") :].strip()
        out["type"] = rest.split(",")[0].strip()
    dstart = attrs.find("description:")
    if dstart >= 0:
        tail = attrs[dstart + len("description:") :]
        # description is greedy: it runs to the final ", name:" key
        nkey = tail.rfind(", name:")
        out["description"] = (tail[:nkey] if nkey >= 0 else tail).strip()
    return out


def _parse_spine_observation(text: str) -> dict:
    payload = _spine_payload()
    for name, argtext in _iter_update_calls(text):
        if name == "add_nodes":
            for entry in _split_top_level(argtext):
                if entry.strip():
                    payload["added_nodes"].append(_parse_node_entry(entry))
        elif name == "add_connections":
            for entry in _split_top_level(argtext):
                e = entry.strip()
                if not (e.startswith("[") and e.endswith("]")):
                    raise ParseError(0, "[a, b]", e[:40])
                pair = [p.strip() for p in e[1:-1].split(",")]
                if len(pair) != 2:
                    raise ParseError(0, "two endpoints", e[:40])
                payload["added_connections"].append(pair)
        elif name == "update_robot_location":
            payload["robot_location"] = argtext.strip()
        elif name == "update_node_attributes":
            body = argtext.strip()
            if not (body.startswith("{") and body.endswith("}")):
                raise ParseError(0, "{name: ..., description: ...}", body[:40])
            inner = body[1:-1]
            if not inner.startswith("name:"):
                raise ParseError(0, "name: first")
            rest = inner[len("name:") :]
            dkey = rest.find(", description:")
            if dkey < 0:
                raise ParseError(0, "', description:'")
            payload["attributes"].append(
                {
                    "name": rest[:dkey].strip(),
                    "description": rest[dkey + len(", description:") :].strip(),
                }
            )
        elif name in ("remove_node", "remove_connections"):
            # grammar verbs this emulator never emits; accepted and ignored
            continue
        else:
            raise ParseError(0, "a known update call", name)
    return payload
