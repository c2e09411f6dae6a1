"""Shared fixtures: recorded reference files and an independent random-graph source."""
from __future__ import annotations

import json
import random
from pathlib import Path

import pytest

from planforge.envs import ObjectNode, RegionNode, SceneGraph, canonical_edge

FIXTURES = Path(__file__).parent / "fixtures"


def load_fixture(name: str):
    text = (FIXTURES / name).read_text(encoding="utf-8")
    return json.loads(text) if name.endswith(".json") else text


@pytest.fixture
def countryside_graph():
    from planforge.envs import scene_graph_from_dict

    return scene_graph_from_dict(load_fixture("countryside_graph.json"))


@pytest.fixture
def boardwalk_scenario_raw() -> dict:
    return load_fixture("boardwalk_scenario.json")


@pytest.fixture
def boardwalk_graph(boardwalk_scenario_raw):
    from planforge.envs import scene_graph_from_dict

    return scene_graph_from_dict(boardwalk_scenario_raw["graph"])


def random_graph(rng: random.Random, max_regions: int = 8, connected: bool = False) -> SceneGraph:
    """Small random scene graph; edge set is arbitrary unless `connected`.

    Test-side generator, independent of the package's procedural source.
    """
    n_regions = rng.randint(1, max_regions)
    n_objects = rng.randint(0, 4)
    regions = [
        RegionNode(f"r{i}", (rng.uniform(-50, 50), rng.uniform(-50, 50)))
        for i in range(n_regions)
    ]
    objects = [
        ObjectNode(
            f"o{i}",
            (rng.uniform(-50, 50), rng.uniform(-50, 50)),
            description=f"object number {i}",
        )
        for i in range(n_objects)
    ]
    edges = set()
    if connected:
        for i in range(1, n_regions):
            j = rng.randrange(i)
            edges.add(canonical_edge(f"r{i}", f"r{j}"))
    possible = [
        canonical_edge(f"r{i}", f"r{j}")
        for i in range(n_regions)
        for j in range(i + 1, n_regions)
    ]
    rng.shuffle(possible)
    for e in possible[: rng.randint(0, max(0, len(possible) // 2))]:
        edges.add(e)
    object_edges = [
        (o.name, regions[rng.randrange(n_regions)].name) for o in objects
    ]
    return SceneGraph(
        regions=regions,
        objects=objects,
        region_edges=sorted(edges),
        object_edges=object_edges,
        robot_location=regions[rng.randrange(n_regions)].name if regions else "",
    )


def brute_force_reachable(g: SceneGraph, start: str, edges: set | None = None) -> set[str]:
    """Exhaustive path-extension closure; the oracle for reachable_regions."""
    allowed = (
        {canonical_edge(*e) for e in g.region_edges}
        if edges is None
        else {canonical_edge(*e) for e in edges}
    )
    grown = True
    reached = {start}
    while grown:
        grown = False
        for a, b in allowed:
            if a in reached and b not in reached:
                reached.add(b)
                grown = True
            elif b in reached and a not in reached:
                reached.add(a)
                grown = True
    return reached
