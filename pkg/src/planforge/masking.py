"""Environment masking: hide a randomized portion of an environment to form
the episode's initial partial observation.

For scene graphs the mask hides nodes (never the robot's region) and their
incident edges, then repairs the visible subgraph so every visible region
stays reachable from the robot; repair un-hides the nodes and edges on the
shortest broken path only, so edges between two visible nodes may legally
remain hidden (map/explore reveals them later). Masks always hide at least
one region when the fraction is positive and the graph has one to spare, so
a masked first observation is strictly partial.

For object sets the mask hides a fraction of the objects (receptacles stay).
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from .envs import (
    Edge,
    Environment,
    ObjectSetEnv,
    SceneGraph,
    canonical_edge,
    environment_to_dict,
    reachable_regions,
    shortest_region_path,
)
from .errors import Violation

DEFAULT_MASK_RANGE = (0.3, 0.8)


@dataclass
class MaskedEnvironment:
    visible: Environment
    hidden_nodes: set[str]
    hidden_edges: set[Edge]  # object-set dialects store hidden placement entries here
    mask_seed: int
    mask_fraction: float
    source: Environment = field(repr=False, default=None)  # type: ignore[assignment]


def mask_environment(env: Environment, fraction: float, seed: int) -> MaskedEnvironment:
    """Hide ~ceil(fraction * (|nodes|-1)) nodes, deterministically in (env, fraction, seed)."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"mask fraction must be in [0, 1], got {fraction}")
    if isinstance(env, SceneGraph):
        return _mask_graph(env, fraction, seed)
    return _mask_object_set(env, fraction, seed)


def _mask_graph(env: SceneGraph, fraction: float, seed: int) -> MaskedEnvironment:
    rng = random.Random(seed)
    regions = env.region_names()
    all_nodes = sorted(regions | env.object_names())
    robot = env.robot_location
    candidates = [n for n in all_nodes if n != robot]
    target = math.ceil(fraction * (len(all_nodes) - 1))
    target = min(target, len(candidates))
    hidden: set[str] = set(rng.sample(candidates, target)) if target else set()

    all_edges = [canonical_edge(*e) for e in env.region_edges] + [
        (o, r) for o, r in env.object_edges
    ]
    hidden_edges: set[Edge] = {
        e for e in all_edges if e[0] in hidden or e[1] in hidden
    }

    def _visible_region_edges() -> set[Edge]:
        return {
            canonical_edge(*e)
            for e in env.region_edges
            if canonical_edge(*e) not in hidden_edges
        }

    # repair: reconnect stranded visible regions along shortest full-graph paths
    while True:
        visible_regions = regions - hidden
        reach = reachable_regions(env, robot, _visible_region_edges())
        stranded = sorted(visible_regions - reach)
        if not stranded:
            break
        paths = [
            (p, r)
            for r in stranded
            if (p := shortest_region_path(env, robot, r)) is not None
        ]
        if not paths:
            # unreachable even in the full graph: hide instead of repair
            hidden.update(stranded)
            hidden_edges.update(
                e for e in all_edges if e[0] in hidden or e[1] in hidden
            )
            continue
        path, _ = min(paths, key=lambda pr: (len(pr[0]), pr[1]))
        hidden.difference_update(path)
        for a, b in zip(path, path[1:]):
            hidden_edges.discard(canonical_edge(a, b))

    # keep the observation strictly partial on the region axis
    if fraction > 0 and not (hidden & regions) and len(regions - hidden) >= 2:
        forced = _removable_region(env, hidden, hidden_edges)
        if forced is not None:
            hidden.add(forced)
            hidden_edges.update(
                e for e in all_edges if e[0] == forced or e[1] == forced
            )

    # objects need a visible, un-hidden anchor edge
    changed = True
    while changed:
        changed = False
        for o in sorted(env.object_names() - hidden):
            anchors = env.anchors_of(o)
            if not anchors:
                continue
            if not any(
                r not in hidden and (o, r) not in hidden_edges for r in anchors
            ):
                hidden.add(o)
                hidden_edges.update({(o, r) for r in anchors})
                changed = True

    visible = SceneGraph(
        regions=[r for r in env.regions if r.name not in hidden],
        objects=[o for o in env.objects if o.name not in hidden],
        region_edges=[
            canonical_edge(*e)
            for e in env.region_edges
            if canonical_edge(*e) not in hidden_edges
        ],
        object_edges=[e for e in env.object_edges if e not in hidden_edges],
        robot_location=robot,
    )
    return MaskedEnvironment(
        visible=visible,
        hidden_nodes=hidden,
        hidden_edges=hidden_edges,
        mask_seed=seed,
        mask_fraction=fraction,
        source=env,
    )


def _removable_region(
    env: SceneGraph, hidden: set[str], hidden_edges: set[Edge]
) -> str | None:
    """A visible non-robot region whose removal keeps the rest connected;
    farthest from the robot first so the mask bites at the frontier."""
    robot = env.robot_location
    visible_edges = {
        canonical_edge(*e)
        for e in env.region_edges
        if canonical_edge(*e) not in hidden_edges
    }
    reach_now = reachable_regions(env, robot, visible_edges)

    def _dist(r: str) -> int:
        path = shortest_region_path(env, robot, r, visible_edges)
        return len(path) if path else 0

    candidates = sorted(
        (r for r in env.region_names() - hidden if r != robot),
        key=lambda r: (-_dist(r), r),
    )
    for cand in candidates:
        pruned_edges = {e for e in visible_edges if cand not in e}
        reach = reachable_regions(env, robot, pruned_edges)
        if reach >= (reach_now - {cand}):
            return cand
    return None


def _mask_object_set(env: ObjectSetEnv, fraction: float, seed: int) -> MaskedEnvironment:
    rng = random.Random(seed)
    target = min(math.ceil(fraction * len(env.objects)), len(env.objects))
    hidden = set(rng.sample(sorted(env.objects), target)) if target else set()
    hidden_entries = {
        (o, loc) for o, loc in env.placements.items() if o in hidden or loc in hidden
    }
    visible = ObjectSetEnv(
        objects=[o for o in env.objects if o not in hidden],
        receptacles=list(env.receptacles),
        placements={
            o: loc for o, loc in env.placements.items() if (o, loc) not in hidden_entries
        },
    )
    return MaskedEnvironment(
        visible=visible,
        hidden_nodes=hidden,
        hidden_edges=hidden_entries,
        mask_seed=seed,
        mask_fraction=fraction,
        source=env,
    )


def reconstruction_violations(m: MaskedEnvironment) -> list[Violation]:
    """Check that visible plus hidden reproduces the source exactly."""
    violations: list[Violation] = []
    src = m.source
    if isinstance(src, SceneGraph):
        assert isinstance(m.visible, SceneGraph)
        vis_names = m.visible.region_names() | m.visible.object_names()
        src_names = src.region_names() | src.object_names()
        if vis_names & m.hidden_nodes:
            violations.append(
                Violation("Overlap", ",".join(sorted(vis_names & m.hidden_nodes)))
            )
        if vis_names | m.hidden_nodes != src_names:
            violations.append(Violation("NodeMismatch", "visible+hidden != source"))
        vis_edges = {canonical_edge(*e) for e in m.visible.region_edges} | set(
            m.visible.object_edges
        )
        src_edges = {canonical_edge(*e) for e in src.region_edges} | set(src.object_edges)
        if vis_edges & m.hidden_edges:
            violations.append(Violation("EdgeOverlap", str(sorted(vis_edges & m.hidden_edges))))
        if vis_edges | m.hidden_edges != src_edges:
            violations.append(Violation("EdgeMismatch", "visible+hidden != source"))
        for node in list(m.visible.regions) + list(m.visible.objects):
            original = src.node(node.name)
            if original is None or original != node:
                violations.append(Violation("NodeAltered", node.name))
        if m.visible.robot_location != src.robot_location:
            violations.append(Violation("RobotMoved", m.visible.robot_location))
    else:
        assert isinstance(m.visible, ObjectSetEnv)
        if set(m.visible.objects) | m.hidden_nodes != set(src.objects):
            violations.append(Violation("NodeMismatch", "visible+hidden != source"))
        if set(m.visible.objects) & m.hidden_nodes:
            violations.append(Violation("Overlap", "hidden object still visible"))
        if m.visible.receptacles != src.receptacles:
            violations.append(Violation("ReceptaclesAltered", ""))
        merged = dict(m.visible.placements)
        merged.update({o: loc for o, loc in m.hidden_edges})
        if merged != src.placements:
            violations.append(Violation("PlacementMismatch", ""))
    return violations


def initial_observation(m: MaskedEnvironment, dialect: str) -> str:
    """Render the visible environment in the dialect's observation syntax.

    Descriptions are withheld: they only surface later through map, explore,
    and inspect updates.
    """
    env = m.visible
    if dialect == "spine":
        assert isinstance(env, SceneGraph)
        data = environment_to_dict(env)
        for node in data["regions"] + data["objects"]:
            node.pop("description", None)
        return json.dumps(data, ensure_ascii=False)
    assert isinstance(env, ObjectSetEnv)
    if dialect == "saycan":
        return "objects = [%s]" % ", ".join(list(env.objects) + list(env.receptacles))
    return "Visible objects: %s" % ", ".join(env.objects)
