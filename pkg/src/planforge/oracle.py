"""Deterministic scripted stand-in for the source planner (scene-graph dialect).

The oracle rebuilds its world view from the conversation alone (initial
observation plus update messages), then plans with breadth-first search:
goto chains toward revealed goals, map_region on the nearest frontier when
the goal is still hidden, answer(...) once its GoalSpec is satisfied. Goal
specs and the underlying environment arrive out-of-band through a task
registry; emitted actions are always parseable and always feasible.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

from .emulator import parse_observation
from .envs import Edge, SceneGraph, canonical_edge, reachable_regions, shortest_region_path
from .goals import GoalSpec
from .plan_io import ActionCall, PlannerResponse, render_response


@dataclass
class _View:
    """What the conversation has revealed so far."""

    nodes: set[str]
    region_edges: set[Edge]
    robot: str
    visited: set[str]


def _rebuild_view(messages: list[dict[str, str]], env: SceneGraph) -> _View:
    regions = env.region_names()
    view: _View | None = None
    for msg in messages:
        if msg["role"] != "user":
            continue
        content = msg["content"]
        if view is None:
            data = json.loads(content)
            nodes = {n["name"] for n in data["regions"]} | {
                n["name"] for n in data["objects"]
            }
            edges = {canonical_edge(*e) for e in data["region_connections"]}
            view = _View(
                nodes=nodes,
                region_edges=edges,
                robot=data["robot_location"],
                visited={data["robot_location"]},
            )
            continue
        if content.startswith(("InfeasibleAction", "MalformedAction", "Your last message")):
            continue
        try:
            payload = parse_observation(content)
        except Exception:
            continue
        for node in payload["added_nodes"]:
            view.nodes.add(node["name"])
        for a, b in payload["added_connections"]:
            if a in regions and b in regions:
                view.region_edges.add(canonical_edge(a, b))
            else:
                view.nodes.update({a, b})
        if payload["robot_location"]:
            view.robot = payload["robot_location"]
            view.visited.add(view.robot)
    if view is None:
        raise ValueError("no initial observation found in conversation")
    return view


def _extract_task(messages: list[dict[str, str]]) -> str:
    system = messages[0]["content"]
    marker = "TASK:"
    idx = system.rfind(marker)
    if idx < 0:
        raise ValueError("system message carries no task")
    return system[idx + len(marker) :].strip()


class OraclePlanner:
    """BFS planner over the revealed graph, scripted against a goal registry.

    Registered either per task text or per episode key (scenario_id_taskN);
    the key form disambiguates identical task strings across scenarios.
    """

    def __init__(
        self,
        by_task: dict[str, tuple[SceneGraph, GoalSpec]] | None = None,
        by_key: dict[str, tuple[SceneGraph, GoalSpec]] | None = None,
    ):
        self.by_task = by_task or {}
        self.by_key = by_key or {}

    def bind(self, episode_key: str) -> tuple[SceneGraph, GoalSpec] | None:
        return self.by_key.get(episode_key)

    def plan(
        self,
        messages: list[dict[str, str]],
        bound: tuple[SceneGraph, GoalSpec] | None = None,
    ) -> str:
        task = _extract_task(messages)
        if bound is None:
            if task not in self.by_task:
                raise KeyError(f"no goal registered for task {task!r}")
            bound = self.by_task[task]
        env, goal = bound
        view = _rebuild_view(messages, env)
        response = self._decide(env, goal, view, task)
        return render_response(response)

    # -- strategy ---------------------------------------------------------

    def _decide(self, env: SceneGraph, goal: GoalSpec, view: _View, task: str) -> PlannerResponse:
        done, mention = self._satisfied(goal, view)
        if done:
            message = "Task complete."
            if mention:
                message = "Task complete. Found: %s." % ", ".join(mention)
            return self._respond(task, view, "goal satisfied", [ActionCall("answer", (message,))])

        if goal.kind == "visit_region":
            target = goal.targets[0]
            if target in view.nodes:
                path = shortest_region_path(env, view.robot, target, view.region_edges)
                if path and len(path) > 1:
                    gotos = [ActionCall("goto", (r,)) for r in path[1:]]
                    final = ActionCall(
                        "answer", (f"Task complete. Found: {target}. Arrived at {target}.",)
                    )
                    return self._respond(task, view, f"walking to {target}", gotos + [final])
        frontier = self._nearest_frontier(env, view)
        if frontier is None:
            return self._respond(
                task, view, "nothing left to uncover", [ActionCall("answer", ("I could not complete the task.",))]
            )
        return self._respond(
            task, view, f"mapping frontier region {frontier}", [ActionCall("map_region", (frontier,))]
        )

    def _satisfied(self, goal: GoalSpec, view: _View) -> tuple[bool, tuple[str, ...]]:
        if goal.kind == "visit_region":
            target = goal.targets[0]
            return view.robot == target, (target,)
        if goal.kind == "reveal_object":
            return set(goal.targets) <= view.nodes, goal.targets
        if goal.kind == "answer_mentions":
            named = tuple(t for t in goal.tokens)
            node_tokens = {t for t in goal.tokens}
            return node_tokens <= view.nodes, named
        return False, ()

    def _nearest_frontier(self, env: SceneGraph, view: _View) -> str | None:
        reachable = reachable_regions(env, view.robot, view.region_edges)
        known_regions = view.nodes & env.region_names()
        candidates = []
        for region in sorted(known_regions & reachable):
            hidden_neighbors = env.neighbors(region) - view.nodes
            hidden_objects = env.objects_at(region) - view.nodes
            if hidden_neighbors or hidden_objects:
                path = shortest_region_path(env, view.robot, region, view.region_edges)
                candidates.append((len(path) if path else 1 << 30, region))
        if not candidates:
            return None
        return min(candidates)[1]

    def _respond(
        self, task: str, view: _View, reasoning: str, plan: list[ActionCall]
    ) -> PlannerResponse:
        return PlannerResponse(
            dialect="spine",
            plan=plan,
            raw="",
            primary_goal=task,
            relevant_graph=", ".join(sorted(view.nodes)[:8]),
            reasoning=reasoning,
        )


def oracle_for_scenarios(scenarios) -> OraclePlanner:
    """Build the scripted planner's registry from goal-carrying scenarios."""
    by_task: dict[str, tuple[SceneGraph, GoalSpec]] = {}
    by_key: dict[str, tuple[SceneGraph, GoalSpec]] = {}
    for scenario in scenarios:
        if scenario.goals is None or scenario.dialect != "spine":
            continue
        for index, (task, goal) in enumerate(zip(scenario.tasks, scenario.goals)):
            entry = (scenario.environment, goal)
            by_task[task] = entry
            by_key[f"{scenario.scenario_id}_task{index}"] = entry
    return OraclePlanner(by_task=by_task, by_key=by_key)
