"""Machine-checkable goal specifications attached to procedural tasks.

The generation stage pairs every procedural task with a GoalSpec so episodes
can be scored offline, and so the scripted oracle planner knows when a task
is complete.
"""
from __future__ import annotations

from dataclasses import dataclass

from .envs import Environment, ObjectSetEnv, SceneGraph
from .errors import SchemaError, Violation

GOAL_KINDS = (
    "visit_region",
    "reveal_object",
    "answer_mentions",
    "placement_predicate",
    "subgoal_sequence",
)


@dataclass(frozen=True)
class GoalSpec:
    kind: str
    targets: tuple[str, ...] = ()
    tokens: tuple[str, ...] = ()
    require_placements: tuple[tuple[str, str], ...] = ()
    subgoals: tuple[str, ...] = ()
    specification: str = "fully"  # fully | under
    category: str = "mapping"  # mapping | exploration

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "targets": list(self.targets),
            "tokens": list(self.tokens),
            "require_placements": [list(p) for p in self.require_placements],
            "subgoals": list(self.subgoals),
            "difficulty": {"specification": self.specification, "category": self.category},
        }

    @staticmethod
    def from_dict(data: dict, path: str = "/goals") -> "GoalSpec":
        if not isinstance(data, dict) or "kind" not in data:
            raise SchemaError(f"{path}/kind")
        if data["kind"] not in GOAL_KINDS:
            raise SchemaError(f"{path}/kind", f"unknown goal kind {data['kind']!r}")
        difficulty = data.get("difficulty", {})
        return GoalSpec(
            kind=data["kind"],
            targets=tuple(data.get("targets", ())),
            tokens=tuple(data.get("tokens", ())),
            require_placements=tuple(
                (p[0], p[1]) for p in data.get("require_placements", ())
            ),
            subgoals=tuple(data.get("subgoals", ())),
            specification=difficulty.get("specification", "fully"),
            category=difficulty.get("category", "mapping"),
        )


def goal_violations(goal: GoalSpec, env: Environment) -> list[Violation]:
    """Every name a goal references must exist in the environment."""
    out: list[Violation] = []
    if isinstance(env, SceneGraph):
        known = env.region_names() | env.object_names()
    else:
        assert isinstance(env, ObjectSetEnv)
        known = set(env.objects) | set(env.receptacles)
    for name in goal.targets:
        if name not in known:
            out.append(Violation("UnknownGoalTarget", name))
    for obj, _loc in goal.require_placements:
        if obj not in known:
            out.append(Violation("UnknownGoalTarget", obj))
    return out
