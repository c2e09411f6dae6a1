"""Textual environment representations: scene graphs and object sets.

A scene graph has region nodes (traversable points) and object nodes
(semantic entities); region-region edges mark traversable paths and
object-region edges mark visibility from a location. An object set is the
flat list-of-things representation used by tabletop and household planners.

Both parse from / serialize to JSON with the key names the planner dialects
expect ("regions", "objects", "region_connections", "object_connections",
"robot_location"); see docs/environment_schema.json.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field

from .errors import SchemaError, Violation

Edge = tuple[str, str]


def canonical_edge(a: str, b: str) -> Edge:
    """Undirected edge in canonical (lexicographic) endpoint order."""
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class RegionNode:
    name: str
    coords: tuple[float, float]
    description: str | None = None  # hidden metadata, revealed by inspect


@dataclass(frozen=True)
class ObjectNode:
    name: str
    coords: tuple[float, float]
    description: str | None = None


@dataclass
class SceneGraph:
    """Scene-graph environment. Region edges are stored undirected and
    canonically ordered; node names are unique across regions and objects."""

    regions: list[RegionNode] = field(default_factory=list)
    objects: list[ObjectNode] = field(default_factory=list)
    region_edges: list[Edge] = field(default_factory=list)
    object_edges: list[Edge] = field(default_factory=list)  # (object, region)
    robot_location: str = ""

    def region_names(self) -> set[str]:
        return {r.name for r in self.regions}

    def object_names(self) -> set[str]:
        return {o.name for o in self.objects}

    def node(self, name: str) -> RegionNode | ObjectNode | None:
        for n in self.regions:
            if n.name == name:
                return n
        for n in self.objects:
            if n.name == name:
                return n
        return None

    def neighbors(self, region: str) -> set[str]:
        """Regions adjacent to `region` via region_edges."""
        out = set()
        for a, b in self.region_edges:
            if a == region:
                out.add(b)
            elif b == region:
                out.add(a)
        return out

    def objects_at(self, region: str) -> set[str]:
        return {o for o, r in self.object_edges if r == region}

    def anchors_of(self, obj: str) -> set[str]:
        """Regions an object is visible from."""
        return {r for o, r in self.object_edges if o == obj}


@dataclass
class ObjectSetEnv:
    """Flat environment of manipulable objects and receptacles.

    `placements` maps an object to whatever it currently sits on: a
    receptacle, another object, or a named position such as "middle".
    Objects absent from the map rest on the table.
    """

    objects: list[str] = field(default_factory=list)
    receptacles: list[str] = field(default_factory=list)
    placements: dict[str, str] = field(default_factory=dict)


Environment = SceneGraph | ObjectSetEnv


def validate_graph(g: SceneGraph) -> list[Violation]:
    """Check every scene-graph invariant; an empty list means the graph is valid."""
    violations: list[Violation] = []
    region_names = [r.name for r in g.regions]
    object_names = [o.name for o in g.objects]
    regions = set(region_names)
    objects = set(object_names)

    seen: set[str] = set()
    for name in region_names + object_names:
        if not name or not name.strip():
            violations.append(Violation("EmptyName", repr(name)))
        if name in seen:
            violations.append(Violation("DuplicateName", name))
        seen.add(name)

    for node in list(g.regions) + list(g.objects):
        x, y = node.coords
        if not (math.isfinite(x) and math.isfinite(y)):
            violations.append(Violation("NonFiniteCoords", node.name))

    seen_edges: set[Edge] = set()
    for a, b in g.region_edges:
        for end in (a, b):
            if end not in regions:
                violations.append(
                    Violation("UnknownEndpoint", end, f"region edge [{a}, {b}]")
                )
        if a == b:
            violations.append(Violation("SelfLoop", a))
        key = canonical_edge(a, b)
        if key in seen_edges:
            violations.append(Violation("DuplicateEdge", f"[{key[0]}, {key[1]}]"))
        seen_edges.add(key)

    for o, r in g.object_edges:
        if o not in objects:
            violations.append(
                Violation("UnknownEndpoint", o, f"object edge [{o}, {r}] needs an object")
            )
        if r not in regions:
            violations.append(
                Violation("UnknownEndpoint", r, f"object edge [{o}, {r}] needs a region")
            )

    if g.robot_location not in regions:
        violations.append(Violation("RobotNotInRegion", g.robot_location))

    return violations


def validate_object_set(env: ObjectSetEnv) -> list[Violation]:
    """Check object-set invariants: known placement keys, no self-support, acyclic chains."""
    violations: list[Violation] = []
    objects = set(env.objects)
    for obj, loc in env.placements.items():
        if obj not in objects:
            violations.append(Violation("UnknownObject", obj, "placement key"))
        if obj == loc:
            violations.append(Violation("SelfPlacement", obj))
    # follow each support chain; a revisit means a cycle
    for start in env.placements:
        seen = {start}
        cur = env.placements.get(start)
        while cur is not None and cur in env.placements:
            if cur in seen:
                violations.append(Violation("PlacementCycle", start))
                break
            seen.add(cur)
            cur = env.placements.get(cur)
    return violations


def validate_environment(env: Environment) -> list[Violation]:
    if isinstance(env, SceneGraph):
        return validate_graph(env)
    return validate_object_set(env)


def reachable_regions(g: SceneGraph, start: str, edge_filter: set[Edge] | None = None) -> set[str]:
    """Breadth-first closure of `start` under a region-edge subset.

    `edge_filter` is compared after canonical ordering; None means all edges.
    Always contains `start`.
    """
    if start not in g.region_names():
        raise SchemaError("/robot_location", f"unknown region {start!r}")
    if edge_filter is None:
        allowed = {canonical_edge(a, b) for a, b in g.region_edges}
    else:
        allowed = {canonical_edge(a, b) for a, b in edge_filter}
    adjacency: dict[str, set[str]] = {}
    for a, b in g.region_edges:
        if canonical_edge(a, b) in allowed:
            adjacency.setdefault(a, set()).add(b)
            adjacency.setdefault(b, set()).add(a)
    seen = {start}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nxt in adjacency.get(cur, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def nodes_within_radius(g: SceneGraph, center: str, radius: float) -> set[str]:
    """All node names within Euclidean `radius` of a region, excluding the region itself."""
    center_node = g.node(center)
    if center_node is None or center not in g.region_names():
        raise SchemaError("/regions", f"unknown region {center!r}")
    cx, cy = center_node.coords
    out = set()
    for node in list(g.regions) + list(g.objects):
        if node.name == center:
            continue
        if math.dist((cx, cy), node.coords) <= radius:
            out.add(node.name)
    return out


def shortest_region_path(
    g: SceneGraph, start: str, goal: str, edge_filter: set[Edge] | None = None
) -> list[str] | None:
    """Shortest region path from start to goal (inclusive), ties broken by name.

    Returns None when goal is unreachable under the edge subset.
    """
    if start == goal:
        return [start]
    if edge_filter is None:
        allowed = {canonical_edge(a, b) for a, b in g.region_edges}
    else:
        allowed = {canonical_edge(a, b) for a, b in edge_filter}
    adjacency: dict[str, list[str]] = {}
    for a, b in g.region_edges:
        if canonical_edge(a, b) in allowed:
            adjacency.setdefault(a, []).append(b)
            adjacency.setdefault(b, []).append(a)
    for k in adjacency:
        adjacency[k].sort()
    parent: dict[str, str] = {start: start}
    queue = deque([start])
    while queue:
        cur = queue.popleft()
        for nxt in adjacency.get(cur, ()):
            if nxt not in parent:
                parent[nxt] = cur
                if nxt == goal:
                    path = [goal]
                    while path[-1] != start:
                        path.append(parent[path[-1]])
                    return path[::-1]
                queue.append(nxt)
    return None


# -- JSON wire format ---------------------------------------------------------

def _require(obj: dict, key: str, path: str) -> object:
    if key not in obj:
        raise SchemaError(f"{path}/{key}")
    return obj[key]


def _parse_node(raw: object, path: str) -> tuple[str, tuple[float, float], str | None]:
    if not isinstance(raw, dict):
        raise SchemaError(path, "node must be an object")
    name = _require(raw, "name", path)
    coords = _require(raw, "coords", path)
    if not isinstance(name, str) or not name.strip():
        raise SchemaError(f"{path}/name", "non-empty string required")
    if (
        not isinstance(coords, (list, tuple))
        or len(coords) != 2
        or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in coords)
    ):
        raise SchemaError(f"{path}/coords", "pair of numbers required")
    desc = raw.get("description")
    if desc is not None and not isinstance(desc, str):
        raise SchemaError(f"{path}/description", "string required")
    return name.strip(), (float(coords[0]), float(coords[1])), desc


def _parse_edge(raw: object, path: str) -> Edge:
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 2
        or not all(isinstance(e, str) for e in raw)
    ):
        raise SchemaError(path, "pair of names required")
    return (raw[0].strip(), raw[1].strip())


def scene_graph_from_dict(data: dict, path: str = "") -> SceneGraph:
    regions_raw = _require(data, "regions", path)
    objects_raw = _require(data, "objects", path)
    if not isinstance(regions_raw, list):
        raise SchemaError(f"{path}/regions", "list required")
    if not isinstance(objects_raw, list):
        raise SchemaError(f"{path}/objects", "list required")
    regions = [
        RegionNode(*_parse_node(r, f"{path}/regions/{i}")) for i, r in enumerate(regions_raw)
    ]
    objects = [
        ObjectNode(*_parse_node(o, f"{path}/objects/{i}")) for i, o in enumerate(objects_raw)
    ]
    region_edges_raw = data.get("region_connections", [])
    object_edges_raw = data.get("object_connections", [])
    if not isinstance(region_edges_raw, list):
        raise SchemaError(f"{path}/region_connections", "list required")
    if not isinstance(object_edges_raw, list):
        raise SchemaError(f"{path}/object_connections", "list required")
    region_edges = [
        canonical_edge(*_parse_edge(e, f"{path}/region_connections/{i}"))
        for i, e in enumerate(region_edges_raw)
    ]
    # object edges keep (object, region) order; fix swapped pairs when unambiguous
    object_names = {o.name for o in objects}
    object_edges = []
    for i, e in enumerate(object_edges_raw):
        a, b = _parse_edge(e, f"{path}/object_connections/{i}")
        if a not in object_names and b in object_names:
            a, b = b, a
        object_edges.append((a, b))
    robot = _require(data, "robot_location", path)
    if not isinstance(robot, str):
        raise SchemaError(f"{path}/robot_location", "string required")
    return SceneGraph(
        regions=regions,
        objects=objects,
        region_edges=region_edges,
        object_edges=object_edges,
        robot_location=robot.strip(),
    )


def object_set_from_dict(data: dict, path: str = "") -> ObjectSetEnv:
    objects_raw = _require(data, "objects", path)
    if not isinstance(objects_raw, list) or not all(isinstance(o, str) for o in objects_raw):
        raise SchemaError(f"{path}/objects", "list of names required")
    receptacles_raw = data.get("receptacles", [])
    if not isinstance(receptacles_raw, list) or not all(
        isinstance(r, str) for r in receptacles_raw
    ):
        raise SchemaError(f"{path}/receptacles", "list of names required")
    placements_raw = data.get("placements", {})
    if not isinstance(placements_raw, dict):
        raise SchemaError(f"{path}/placements", "object -> location map required")
    placements = {}
    for k, v in placements_raw.items():
        if not isinstance(v, str):
            raise SchemaError(f"{path}/placements/{k}", "location name required")
        placements[str(k).strip()] = v.strip()
    return ObjectSetEnv(
        objects=[o.strip() for o in objects_raw],
        receptacles=[r.strip() for r in receptacles_raw],
        placements=placements,
    )


def environment_from_dict(data: object, path: str = "") -> Environment:
    """Dispatch on shape: scene graphs carry "regions", object sets do not."""
    if not isinstance(data, dict):
        raise SchemaError(path or "/", "object required")
    if "regions" in data:
        return scene_graph_from_dict(data, path)
    if "objects" in data:
        return object_set_from_dict(data, path)
    raise SchemaError(f"{path}/regions")


def parse_environment(text: str) -> Environment:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("/", f"invalid JSON: {exc}") from None
    return environment_from_dict(data)


def _node_to_dict(node: RegionNode | ObjectNode) -> dict:
    out: dict = {"name": node.name, "coords": [node.coords[0], node.coords[1]]}
    if node.description is not None:
        out["description"] = node.description
    return out


def environment_to_dict(env: Environment) -> dict:
    if isinstance(env, SceneGraph):
        return {
            "regions": [_node_to_dict(r) for r in env.regions],
            "objects": [_node_to_dict(o) for o in env.objects],
            "object_connections": [[a, b] for a, b in env.object_edges],
            "region_connections": [[a, b] for a, b in env.region_edges],
            "robot_location": env.robot_location,
        }
    return {
        "objects": list(env.objects),
        "receptacles": list(env.receptacles),
        "placements": dict(sorted(env.placements.items())),
    }


def serialize_environment(env: Environment, indent: int | None = None) -> str:
    return json.dumps(environment_to_dict(env), indent=indent, ensure_ascii=False)
