"""Scenario synthesis: prompting a generator model, or a seeded procedural source.

A Scenario bundles a described environment with its task list. The LLM path
mirrors the generation protocol (prompt -> parse -> verify -> corrective
re-prompt); the procedural path is a pure function of (config, seed) that
additionally pairs every task with a machine-checkable GoalSpec, which is
what lets the offline acceptance suite score episodes without any model.
Task template families are documented in docs/task_templates.md.
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .client import Client
from .envs import (
    Environment,
    ObjectNode,
    ObjectSetEnv,
    RegionNode,
    SceneGraph,
    canonical_edge,
    environment_from_dict,
    environment_to_dict,
    validate_environment,
)
from .errors import EnvValidationError, GenerationExhausted, ParseError, SchemaError
from .goals import GoalSpec, goal_violations
from .plan_io import DIALECTS, _strip_code_fence, extract_json_object

NAMED_POSITIONS_IN_PLACES = frozenset({"middle", "table", "left", "right", "top", "bottom"})


@dataclass
class GenConfig:
    env_size: int = 10
    n_tasks: int = 5
    temperature: float = 1.0
    max_reprompts: int = 3
    dialect: str = "spine"
    restart_on_reprompt: bool = False

    def __post_init__(self) -> None:
        if self.env_size < 2:
            raise SchemaError("/generation/env_size", "must be >= 2")
        if self.n_tasks < 1:
            raise SchemaError("/generation/n_tasks", "must be >= 1")
        if not 0 <= self.temperature <= 2:
            raise SchemaError("/generation/temperature", "must be in [0, 2]")
        if self.max_reprompts < 0:
            raise SchemaError("/generation/max_reprompts", "must be >= 0")
        if self.dialect not in DIALECTS:
            raise SchemaError("/generation/dialect", f"unknown dialect {self.dialect!r}")


@dataclass
class Scenario:
    scenario_id: str
    dialect: str
    description: str
    environment: Environment
    tasks: list[str]
    provenance: dict = field(default_factory=dict)
    goals: list[GoalSpec] | None = None

    def to_dict(self) -> dict:
        out = {
            "scenario_id": self.scenario_id,
            "dialect": self.dialect,
            "description": self.description,
            "environment": environment_to_dict(self.environment),
            "tasks": list(self.tasks),
            "provenance": dict(self.provenance),
        }
        if self.goals is not None:
            out["goals"] = [g.to_dict() for g in self.goals]
        return out

    @staticmethod
    def from_dict(data: dict) -> "Scenario":
        for key in ("scenario_id", "dialect", "description", "environment", "tasks"):
            if key not in data:
                raise SchemaError(f"/{key}")
        goals = None
        if data.get("goals") is not None:
            goals = [GoalSpec.from_dict(g) for g in data["goals"]]
        return Scenario(
            scenario_id=data["scenario_id"],
            dialect=data["dialect"],
            description=data["description"],
            environment=environment_from_dict(data["environment"], "/environment"),
            tasks=list(data["tasks"]),
            provenance=dict(data.get("provenance", {})),
            goals=goals,
        )


def save_scenario(scenario: Scenario, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{scenario.scenario_id}.json"
    path.write_text(
        json.dumps(scenario.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    return path


def load_scenario(path: Path) -> Scenario:
    return Scenario.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- prompting ---------------------------------------------------------------

def build_generation_prompt(cfg: GenConfig) -> list[dict[str, str]]:
    """Instantiate the dialect's generator template with SIZE and N_TASKS."""
    template = (
        resources.files("planforge")
        / "assets"
        / "prompts"
        / f"generator_{cfg.dialect}.txt"
    ).read_text(encoding="utf-8")
    body = template.replace("<SIZE>", str(cfg.env_size)).replace(
        "<N_TASKS>", str(cfg.n_tasks)
    )
    return [
        {
            "role": "system",
            "content": "You are a data generator for robot-planning scenarios. "
            "Follow the instructions exactly and answer with JSON only.",
        },
        {"role": "user", "content": body.rstrip("\n")},
    ]


# -- parsing generator output --------------------------------------------------

def _extract_json_array(raw: str) -> list:
    content, _ = _strip_code_fence(raw)
    idx = content.find("[")
    while idx >= 0:
        depth = 0
        end = None
        for i in range(idx, len(content)):
            if content[i] == "[":
                depth += 1
            elif content[i] == "]":
                depth -= 1
                if depth == 0:
                    end = i + 1
                    break
        candidate = content[idx:end] if end else content[idx:]
        try:
            value = json.loads(candidate)
        except json.JSONDecodeError:
            idx = content.find("[", idx + 1)
            continue
        if isinstance(value, list):
            return value
        idx = content.find("[", idx + 1)
    raise SchemaError("/", "no JSON array found")


def parse_generation(raw: str, cfg: GenConfig, scenario_id: str = "scenario_0_0") -> Scenario:
    """Validate one generator reply into a Scenario.

    Raises SchemaError for format misses and EnvValidationError when the
    environment breaks its invariants; both messages are written to be fed
    back to the generator verbatim.
    """
    if cfg.dialect == "spine":
        scenario = _parse_spine_generation(raw, cfg, scenario_id)
    elif cfg.dialect == "saycan":
        scenario = _parse_saycan_generation(raw, cfg, scenario_id)
    else:
        scenario = _parse_llm_planner_generation(raw, cfg, scenario_id)
    violations = validate_environment(scenario.environment)
    if violations:
        raise EnvValidationError(violations)
    if len(scenario.tasks) != cfg.n_tasks:
        raise SchemaError(
            "/tasks", f"expected exactly {cfg.n_tasks} tasks, got {len(scenario.tasks)}"
        )
    return scenario


def _parse_spine_generation(raw: str, cfg: GenConfig, scenario_id: str) -> Scenario:
    try:
        data, _ = extract_json_object(raw)
    except ParseError as exc:
        raise SchemaError("/", str(exc)) from None
    env_data = data.get("environment", data.get("graph"))
    if env_data is None:
        raise SchemaError("/environment")
    env = environment_from_dict(env_data, "/environment")
    if not isinstance(env, SceneGraph):
        raise SchemaError("/environment/regions", "scene graph required")
    tasks = data.get("tasks", data.get("task"))
    if not isinstance(tasks, list) or not all(isinstance(t, str) for t in tasks):
        raise SchemaError("/tasks", "list of task strings required")
    description = data.get("description")
    if not isinstance(description, str) or not description.strip():
        raise SchemaError("/description")
    size = len(env.regions) + len(env.objects)
    if not (0.5 * cfg.env_size <= size <= 1.5 * cfg.env_size):
        raise SchemaError(
            "/environment",
            f"environment size {size} outside +/-50% of requested {cfg.env_size}",
        )
    return Scenario(
        scenario_id=scenario_id,
        dialect="spine",
        description=description.strip(),
        environment=env,
        tasks=[t.strip() for t in tasks],
    )


def _parse_saycan_generation(raw: str, cfg: GenConfig, scenario_id: str) -> Scenario:
    entries = _extract_json_array(raw)
    objects: list[str] = []
    receptacles: list[str] = []
    tasks: list[str] = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "raw_input" not in entry:
            raise SchemaError(f"/{i}/raw_input")
        config = entry.get("config", {})
        if not isinstance(config, dict):
            raise SchemaError(f"/{i}/config")
        tasks.append(str(entry["raw_input"]).strip())
        for name in config.get("pick", []):
            if name not in objects:
                objects.append(str(name))
        for name in config.get("place", []):
            if name in NAMED_POSITIONS_IN_PLACES:
                continue
            if name not in receptacles and name not in objects:
                receptacles.append(str(name))
    if not objects:
        raise SchemaError("/0/config/pick", "at least one pickable object required")
    env = ObjectSetEnv(objects=objects, receptacles=receptacles)
    return Scenario(
        scenario_id=scenario_id,
        dialect="saycan",
        description=f"Tabletop scene with {len(objects)} objects and {len(receptacles)} receptacles.",
        environment=env,
        tasks=tasks,
    )


def _parse_llm_planner_generation(raw: str, cfg: GenConfig, scenario_id: str) -> Scenario:
    try:
        data, _ = extract_json_object(raw)
    except ParseError as exc:
        raise SchemaError("/", str(exc)) from None
    visible = data.get("visible objects", data.get("visible_objects"))
    if not isinstance(visible, list) or not all(isinstance(v, str) for v in visible):
        raise SchemaError("/visible objects", "list of object names required")
    tasks = data.get("tasks")
    if not isinstance(tasks, list) or not all(isinstance(t, str) for t in tasks):
        raise SchemaError("/tasks", "list of task strings required")
    env = ObjectSetEnv(objects=[v.strip() for v in visible])
    return Scenario(
        scenario_id=scenario_id,
        dialect="llm_planner",
        description=str(data.get("reasoning", "Household scene.")).strip() or "Household scene.",
        environment=env,
        tasks=[t.strip() for t in tasks],
    )


# -- generation loop -------------------------------------------------------------

def generate_scenario(
    client: Client, cfg: GenConfig, seed: int, scenario_id: str = "scenario_0_0"
) -> Scenario:
    """Prompt, parse, verify; on failure append the error as a corrective turn.

    Issues at most max_reprompts + 1 completion calls.
    """
    messages = build_generation_prompt(cfg)
    attempts = 0
    last_error: Exception | None = None
    while attempts <= cfg.max_reprompts:
        attempts += 1
        result = client.complete(messages)
        try:
            scenario = parse_generation(result.text, cfg, scenario_id)
        except (SchemaError, EnvValidationError, ParseError) as exc:
            last_error = exc
            correction = (
                f"Your previous generation was invalid: {exc}. "
                "Regenerate the full JSON, fixing this problem."
            )
            if cfg.restart_on_reprompt:
                messages = build_generation_prompt(cfg)
            else:
                messages = messages + [
                    {"role": "assistant", "content": result.text},
                    {"role": "user", "content": correction},
                ]
            continue
        scenario.provenance = {"generator": "llm", "seed": seed, "attempts": attempts}
        return scenario
    raise GenerationExhausted(attempts, last_error or SchemaError("/"))


# -- procedural source ------------------------------------------------------------

_THEMES = [
    {
        "name": "campus",
        "blurb": "A quiet campus quarter with walkways linking lawns and courtyards.",
        "regions": ["quad", "walkway", "courtyard", "lawn", "plaza", "gate", "garden", "terrace"],
        "objects": [
            ("bench", "A weathered bench shaded by trees."),
            ("fountain", "A stone fountain with a low basin."),
            ("statue", "A bronze statue on a granite plinth."),
            ("bike_rack", "A half-full steel bike rack."),
            ("kiosk", "A kiosk plastered with event flyers."),
            ("lamppost", "A black iron lamppost."),
        ],
    },
    {
        "name": "harbor",
        "blurb": "A working harbor front where piers branch off a long quay.",
        "regions": ["quay", "pier", "dock", "slipway", "promenade", "lot", "jetty", "wharf"],
        "objects": [
            ("crate", "A salt-stained shipping crate."),
            ("bollard", "A cast-iron mooring bollard."),
            ("crane", "A small dockside crane, arm folded."),
            ("dinghy", "An overturned wooden dinghy."),
            ("net_pile", "A heap of mended fishing nets."),
            ("fuel_pump", "A marine fuel pump with a worn hose."),
        ],
    },
    {
        "name": "depot",
        "blurb": "An industrial depot of yards and service roads between sheds.",
        "regions": ["yard", "road", "bay", "ramp", "platform", "crossing", "siding", "apron"],
        "objects": [
            ("pallet", "A stack of splintered pallets."),
            ("forklift", "A parked forklift with raised forks."),
            ("drum", "A dented blue chemical drum."),
            ("generator", "A diesel generator under a tarp."),
            ("signage", "A faded clearance-height sign."),
            ("toolbox", "A red toolbox left open."),
        ],
    },
    {
        "name": "park",
        "blurb": "A riverside park with trails winding between clearings.",
        "regions": ["trail", "clearing", "meadow", "grove", "overlook", "bridgehead", "bank", "knoll"],
        "objects": [
            ("picnic_table", "A picnic table carved with initials."),
            ("grill", "A public charcoal grill, recently used."),
            ("signboard", "A trail map signboard behind plexiglass."),
            ("canoe", "A beached aluminum canoe."),
            ("birdhouse", "A birdhouse mounted on a cedar post."),
            ("trash_bin", "A bear-proof trash bin."),
        ],
    },
]

_COLORS = ("red", "green", "blue", "yellow")


def procedural_generate(cfg: GenConfig, seed: int, scenario_id: str | None = None) -> Scenario:
    """Deterministic scenario in (cfg, seed); every task carries a GoalSpec."""
    rng = random.Random((seed, cfg.dialect, cfg.env_size, cfg.n_tasks).__repr__())
    sid = scenario_id or f"scenario_{seed}_0"
    if cfg.dialect == "spine":
        scenario = _procedural_spine(cfg, rng, sid)
    elif cfg.dialect == "saycan":
        scenario = _procedural_saycan(cfg, rng, sid)
    else:
        scenario = _procedural_llm_planner(cfg, rng, sid)
    scenario.provenance = {"generator": "procedural", "seed": seed, "attempts": 1}
    violations = validate_environment(scenario.environment)
    if violations:  # pragma: no cover - generator contract
        raise EnvValidationError(violations)
    assert scenario.goals is not None
    for goal in scenario.goals:
        bad = goal_violations(goal, scenario.environment)
        if bad:  # pragma: no cover - generator contract
            raise EnvValidationError(bad)
    return scenario


def _procedural_spine(cfg: GenConfig, rng: random.Random, sid: str) -> Scenario:
    theme = rng.choice(_THEMES)
    n_regions = max(2, round(cfg.env_size * 0.6))
    n_objects = max(1, cfg.env_size - n_regions)

    regions: list[RegionNode] = []
    counters: dict[str, int] = {}

    def _fresh(base: str) -> str:
        counters[base] = counters.get(base, 0) + 1
        return f"{base}_{counters[base]}"

    coords: dict[str, tuple[float, float]] = {}
    parents: list[str] = []
    for i in range(n_regions):
        base = rng.choice(theme["regions"])
        name = _fresh(base)
        if i == 0:
            xy = (0.0, 0.0)
        else:
            px, py = coords[parents[rng.randrange(len(parents))]]
            angle = rng.uniform(0, 2 * math.pi)
            step = rng.uniform(6, 14)
            xy = (round(px + step * math.cos(angle), 1), round(py + step * math.sin(angle), 1))
        coords[name] = xy
        regions.append(RegionNode(name, xy, description=f"The {name.replace('_', ' ')} area."))
        parents.append(name)

    edges: set = set()
    for i in range(1, n_regions):
        j = rng.randrange(i)
        edges.add(canonical_edge(regions[i].name, regions[j].name))
    extra = n_regions // 4
    for _ in range(extra):
        a, b = rng.sample(range(n_regions), 2)
        edges.add(canonical_edge(regions[a].name, regions[b].name))

    objects: list[ObjectNode] = []
    object_edges = []
    for _ in range(n_objects):
        kind, blurb = rng.choice(theme["objects"])
        name = _fresh(kind)
        anchor = regions[rng.randrange(n_regions)]
        ox = round(anchor.coords[0] + rng.uniform(-4, 4), 1)
        oy = round(anchor.coords[1] + rng.uniform(-4, 4), 1)
        objects.append(ObjectNode(name, (ox, oy), description=blurb))
        object_edges.append((name, anchor.name))

    env = SceneGraph(
        regions=regions,
        objects=objects,
        region_edges=sorted(edges),
        object_edges=object_edges,
        robot_location=regions[0].name,
    )

    tasks: list[str] = []
    goals: list[GoalSpec] = []
    anchor_of = dict(object_edges)
    for i in range(cfg.n_tasks):
        family = i % 4
        if family == 0:
            target = regions[rng.randrange(n_regions)].name
            tasks.append(f"Go to the {target}.")
            goals.append(
                GoalSpec("visit_region", targets=(target,), tokens=(target,),
                         specification="fully", category="mapping")
            )
        elif family == 1:
            obj = objects[rng.randrange(len(objects))].name
            tasks.append(f"Inspect the {obj} and report what you see.")
            goals.append(
                GoalSpec("answer_mentions", targets=(obj,), tokens=(obj,),
                         specification="fully", category="mapping")
            )
        elif family == 2:
            obj = objects[rng.randrange(len(objects))].name
            kind = obj.rsplit("_", 1)[0].replace("_", " ")
            tasks.append(f"I heard there is a {kind} somewhere. Can you find out where?")
            goals.append(
                GoalSpec("answer_mentions", targets=(obj,), tokens=(obj,),
                         specification="under", category="mapping")
            )
        else:
            obj = objects[rng.randrange(len(objects))].name
            kind = obj.rsplit("_", 1)[0].replace("_", " ")
            tasks.append(f"Explore the scene until you locate a {kind}.")
            goals.append(
                GoalSpec("reveal_object", targets=(obj,), tokens=(obj,),
                         specification="under", category="exploration")
            )
    return Scenario(
        scenario_id=sid,
        dialect="spine",
        description=theme["blurb"],
        environment=env,
        tasks=tasks,
        goals=goals,
    )


def _procedural_saycan(cfg: GenConfig, rng: random.Random, sid: str) -> Scenario:
    n_blocks = max(2, min(cfg.env_size, len(_COLORS)))
    colors = rng.sample(_COLORS, n_blocks)
    blocks = [f"{c} block" for c in colors]
    bowls = [f"{c} bowl" for c in colors]
    env = ObjectSetEnv(objects=blocks, receptacles=bowls)
    tasks: list[str] = []
    goals: list[GoalSpec] = []
    for i in range(cfg.n_tasks):
        family = i % 4
        if family == 0:
            tasks.append("sort all the blocks into their matching color bowls.")
            goals.append(
                GoalSpec(
                    "placement_predicate",
                    require_placements=tuple((f"{c} block", f"{c} bowl") for c in colors),
                    specification="fully", category="mapping",
                )
            )
        elif family == 1:
            c1, c2 = rng.sample(colors, 2)
            tasks.append(f"put the {c1} block in the {c2} bowl.")
            goals.append(
                GoalSpec(
                    "placement_predicate",
                    require_placements=((f"{c1} block", f"{c2} bowl"),),
                    specification="fully", category="mapping",
                )
            )
        elif family == 2:
            c = rng.choice(colors)
            tasks.append(f"move the {c} block to the middle.")
            goals.append(
                GoalSpec(
                    "placement_predicate",
                    require_placements=((f"{c} block", "middle"),),
                    specification="fully", category="mapping",
                )
            )
        else:
            c1, c2 = rng.sample(colors, 2)
            tasks.append(f"stack the {c1} block on the {c2} block.")
            goals.append(
                GoalSpec(
                    "placement_predicate",
                    require_placements=((f"{c1} block", f"{c2} block"),),
                    specification="under", category="mapping",
                )
            )
    return Scenario(
        scenario_id=sid,
        dialect="saycan",
        description=f"Tabletop with {', '.join(blocks)} and matching bowls.",
        environment=env,
        tasks=tasks,
        goals=goals,
    )


_HOUSEHOLD_DISTRACTORS = [
    "AlarmClock", "Book", "Cup", "Desk", "DeskLamp", "Fridge", "GarbageCan",
    "HousePlant", "Mug", "Newspaper", "Pen", "Pillow", "RemoteControl",
    "SaltShaker", "Sofa", "Statue", "Television", "Vase", "Watch",
]


def _procedural_llm_planner(cfg: GenConfig, rng: random.Random, sid: str) -> Scenario:
    sliceables = ["Apple", "Bread", "Potato", "Tomato", "Lettuce"]
    receptacles = ["CounterTop", "DiningTable", "Plate", "GarbageCan", "Sink"]
    portables = ["Mug", "Book", "Cup", "SaltShaker", "RemoteControl"]
    visible: list[str] = ["Knife", "Microwave"]
    tasks: list[str] = []
    goals: list[GoalSpec] = []
    for i in range(cfg.n_tasks):
        family = i % 3
        if family == 0:
            food = rng.choice(sliceables)
            tasks.append(f"Slice the {food}.")
            goals.append(
                GoalSpec("subgoal_sequence",
                         subgoals=("PickupObject Knife", f"SliceObject {food}"),
                         specification="fully", category="mapping")
            )
            visible.append(food)
        elif family == 1:
            obj = rng.choice(portables)
            recep = rng.choice(receptacles)
            tasks.append(f"Put the {obj} on the {recep}.")
            goals.append(
                GoalSpec("subgoal_sequence",
                         subgoals=(f"PickupObject {obj}", f"PutObject {obj} {recep}"),
                         specification="fully", category="mapping")
            )
            visible.extend([obj, recep])
        else:
            food = rng.choice(sliceables)
            tasks.append(f"Heat the {food} in the Microwave.")
            goals.append(
                GoalSpec("subgoal_sequence",
                         subgoals=(f"PutObject {food} Microwave", "ToggleObjectOn Microwave"),
                         specification="under", category="mapping")
            )
            visible.append(food)
    seen = set()
    deduped = [v for v in visible if not (v in seen or seen.add(v))]
    target_size = max(cfg.env_size, len(deduped))
    pool = [d for d in _HOUSEHOLD_DISTRACTORS if d not in seen]
    rng.shuffle(pool)
    deduped.extend(pool[: target_size - len(deduped)])
    env = ObjectSetEnv(objects=deduped)
    return Scenario(
        scenario_id=sid,
        dialect="llm_planner",
        description="A cluttered household scene.",
        environment=env,
        tasks=tasks,
        goals=goals,
    )


def batch_generate(
    cfg: GenConfig,
    base_seed: int,
    count: int,
    client: Client | None = None,
) -> list[Scenario]:
    """Generate `count` scenarios with per-scenario derived seeds.

    With a client the generator model is used; otherwise the procedural source.
    """
    scenarios = []
    for index in range(count):
        sid = f"scenario_{base_seed}_{index}"
        derived = base_seed * 100_003 + index
        if client is None:
            scenarios.append(procedural_generate(cfg, derived, sid))
        else:
            scenarios.append(generate_scenario(client, cfg, derived, sid))
    return scenarios
