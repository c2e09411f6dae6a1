"""Scenario synthesis: prompts, generator-output parsing, re-prompt loop, procedural source."""
from __future__ import annotations

import json

import pytest

from planforge.client import BackendConfig, CompletionResult
from planforge.envs import ObjectSetEnv, SceneGraph, reachable_regions, validate_environment
from planforge.errors import EnvValidationError, GenerationExhausted, SchemaError
from planforge.goals import goal_violations
from planforge.scenarios import (
    GenConfig,
    batch_generate,
    build_generation_prompt,
    generate_scenario,
    load_scenario,
    parse_generation,
    procedural_generate,
    save_scenario,
)


class TestPrompts:
    def test_spine_prompt_substitutes_and_pins_instructions(self):
        messages = build_generation_prompt(GenConfig(env_size=20, n_tasks=25, dialect="spine"))
        body = messages[1]["content"]
        assert "Generate an environment of size 20 with 25 corresponding tasks" in body
        assert "DO NOT reference specific objects" in body
        assert "<SIZE>" not in body and "<N_TASKS>" not in body

    def test_saycan_prompt_ends_with_counts(self):
        messages = build_generation_prompt(GenConfig(env_size=4, n_tasks=3, dialect="saycan"))
        assert messages[1]["content"].endswith("Generate 3 tasks using 4 blocks.")

    def test_household_prompt_lists_vocabulary_and_capabilities(self):
        messages = build_generation_prompt(GenConfig(env_size=8, n_tasks=2, dialect="llm_planner"))
        body = messages[1]["content"]
        for token in ("OpenObject", "SliceObject", "'Fridge'", "'Microwave'"):
            assert token in body


class TestParseGeneration:
    def test_boardwalk_generation_parses(self, boardwalk_scenario_raw):
        raw = json.dumps(boardwalk_scenario_raw)
        cfg = GenConfig(env_size=29, n_tasks=25, dialect="spine")
        scenario = parse_generation(raw, cfg)
        assert isinstance(scenario.environment, SceneGraph)
        assert len(scenario.environment.objects) == 9
        assert len(scenario.environment.regions) == 20
        assert len(scenario.tasks) == 25
        assert scenario.description.startswith("A bustling coastal boardwalk")

    def test_description_only_is_schema_error(self):
        cfg = GenConfig(env_size=4, n_tasks=1, dialect="spine")
        with pytest.raises(SchemaError) as err:
            parse_generation('{"description": "just words"}', cfg)
        assert err.value.path == "/environment"

    def test_undeclared_connection_endpoint_is_validation_error(self):
        cfg = GenConfig(env_size=2, n_tasks=1, dialect="spine")
        raw = json.dumps(
            {
                "description": "d",
                "environment": {
                    "regions": [{"name": "a", "coords": [0, 0]}],
                    "objects": [{"name": "o", "coords": [1, 1]}],
                    "region_connections": [["a", "ghost"]],
                    "object_connections": [],
                    "robot_location": "a",
                },
                "tasks": ["t"],
            }
        )
        with pytest.raises(EnvValidationError) as err:
            parse_generation(raw, cfg)
        assert any(v.rule == "UnknownEndpoint" for v in err.value.violations)

    def test_wrong_task_count_rejected(self):
        cfg = GenConfig(env_size=2, n_tasks=3, dialect="spine")
        raw = json.dumps(
            {
                "description": "d",
                "environment": {
                    "regions": [{"name": "a", "coords": [0, 0]}],
                    "objects": [{"name": "o", "coords": [1, 1]}],
                    "object_connections": [["o", "a"]],
                    "region_connections": [],
                    "robot_location": "a",
                },
                "tasks": ["only one"],
            }
        )
        with pytest.raises(SchemaError) as err:
            parse_generation(raw, cfg)
        assert err.value.path == "/tasks"

    def test_size_far_from_requested_rejected(self):
        cfg = GenConfig(env_size=40, n_tasks=1, dialect="spine")
        raw = json.dumps(
            {
                "description": "d",
                "environment": {
                    "regions": [{"name": "a", "coords": [0, 0]}],
                    "objects": [],
                    "region_connections": [],
                    "object_connections": [],
                    "robot_location": "a",
                },
                "tasks": ["t"],
            }
        )
        with pytest.raises(SchemaError):
            parse_generation(raw, cfg)

    def test_json_wrapped_in_prose_and_fences(self):
        cfg = GenConfig(env_size=2, n_tasks=1, dialect="spine")
        inner = {
            "description": "d",
            "environment": {
                "regions": [{"name": "a", "coords": [0, 0]}],
                "objects": [{"name": "o", "coords": [1, 1]}],
                "object_connections": [["o", "a"]],
                "region_connections": [],
                "robot_location": "a",
            },
            "tasks": ["t"],
        }
        raw = "Here you go!\n```json\n" + json.dumps(inner) + "\n```\nHope that helps."
        scenario = parse_generation(raw, cfg)
        assert scenario.tasks == ["t"]

    def test_saycan_array_parses(self):
        cfg = GenConfig(env_size=4, n_tasks=2, dialect="saycan")
        raw = json.dumps(
            [
                {"raw_input": "sort the blocks.",
                 "config": {"pick": ["red block", "blue block"],
                            "place": ["red bowl", "blue bowl"]}},
                {"raw_input": "move the red block to the middle.",
                 "config": {"pick": ["red block"], "place": ["middle"]}},
            ]
        )
        scenario = parse_generation(raw, cfg)
        env = scenario.environment
        assert isinstance(env, ObjectSetEnv)
        assert env.objects == ["red block", "blue block"]
        assert env.receptacles == ["red bowl", "blue bowl"]
        assert len(scenario.tasks) == 2

    def test_household_object_set_parses(self):
        cfg = GenConfig(env_size=3, n_tasks=2, dialect="llm_planner")
        raw = json.dumps(
            {
                "tasks": ["Heat the egg.", "Open the fridge."],
                "visible objects": ["Egg", "Microwave", "Fridge"],
                "reasoning": "kitchen things",
            }
        )
        scenario = parse_generation(raw, cfg)
        assert scenario.environment.objects == ["Egg", "Microwave", "Fridge"]


class _ScriptedClient:
    config = BackendConfig(kind="null")

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0
        self.transcripts = []

    def session(self, key):
        return self

    def complete(self, messages):
        self.transcripts.append(list(messages))
        self.calls += 1
        return CompletionResult(self.replies.pop(0), 0.0, 1)

    def close(self):
        pass


VALID_SPINE_REPLY = json.dumps(
    {
        "description": "a tiny yard",
        "environment": {
            "regions": [{"name": "yard_1", "coords": [0, 0]},
                        {"name": "gate_1", "coords": [5, 0]}],
            "objects": [{"name": "crate_1", "coords": [1, 1]}],
            "object_connections": [["crate_1", "yard_1"]],
            "region_connections": [["yard_1", "gate_1"]],
            "robot_location": "yard_1",
        },
        "tasks": ["Go to the gate_1."],
    }
)


class TestGenerateLoop:
    def test_first_try_success(self):
        client = _ScriptedClient([VALID_SPINE_REPLY])
        cfg = GenConfig(env_size=3, n_tasks=1, dialect="spine")
        scenario = generate_scenario(client, cfg, seed=5)
        assert scenario.provenance == {"generator": "llm", "seed": 5, "attempts": 1}
        assert client.calls == 1

    def test_garbage_then_valid_adds_corrective_turn(self):
        client = _ScriptedClient(["not even json", VALID_SPINE_REPLY])
        cfg = GenConfig(env_size=3, n_tasks=1, dialect="spine")
        scenario = generate_scenario(client, cfg, seed=5)
        assert scenario.provenance["attempts"] == 2
        second_call = client.transcripts[1]
        assert second_call[-2]["role"] == "assistant"
        assert second_call[-2]["content"] == "not even json"
        assert second_call[-1]["role"] == "user"
        assert "invalid" in second_call[-1]["content"]

    def test_exhaustion_after_budget(self):
        client = _ScriptedClient(["junk"] * 3)
        cfg = GenConfig(env_size=3, n_tasks=1, dialect="spine", max_reprompts=2)
        with pytest.raises(GenerationExhausted) as err:
            generate_scenario(client, cfg, seed=5)
        assert client.calls == 3
        assert err.value.attempts == 3

    def test_never_exceeds_call_budget(self):
        for budget in (0, 1, 4):
            client = _ScriptedClient(["junk"] * (budget + 1))
            cfg = GenConfig(env_size=3, n_tasks=1, dialect="spine", max_reprompts=budget)
            with pytest.raises(GenerationExhausted):
                generate_scenario(client, cfg, seed=5)
            assert client.calls == budget + 1


class TestProcedural:
    def test_byte_identical_repeats(self):
        cfg = GenConfig(env_size=10, n_tasks=5, dialect="spine")
        a = procedural_generate(cfg, 7)
        b = procedural_generate(cfg, 7)
        assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())

    def test_validity_and_connectivity_sweep(self):
        cfg = GenConfig(env_size=10, n_tasks=4, dialect="spine")
        for seed in range(1000):
            scenario = procedural_generate(cfg, seed)
            env = scenario.environment
            assert validate_environment(env) == []
            assert reachable_regions(env, env.robot_location) == env.region_names()
            assert scenario.goals is not None and len(scenario.goals) == len(scenario.tasks)
            for goal in scenario.goals:
                assert goal_violations(goal, env) == []

    def test_saycan_style(self):
        cfg = GenConfig(env_size=4, n_tasks=4, dialect="saycan")
        scenario = procedural_generate(cfg, 3)
        assert "sort all the blocks into their matching color bowls." in scenario.tasks
        assert all(o.endswith("block") for o in scenario.environment.objects)
        assert all(r.endswith("bowl") for r in scenario.environment.receptacles)

    def test_household_goals_reference_visible_objects(self):
        cfg = GenConfig(env_size=10, n_tasks=6, dialect="llm_planner")
        for seed in range(50):
            scenario = procedural_generate(cfg, seed)
            visible = set(scenario.environment.objects)
            for goal in scenario.goals:
                for sub in goal.subgoals:
                    for arg in sub.split()[1:]:
                        assert arg in visible

    def test_difficulty_families_present(self):
        cfg = GenConfig(env_size=10, n_tasks=8, dialect="spine")
        scenario = procedural_generate(cfg, 19)
        specs = {g.specification for g in scenario.goals}
        cats = {g.category for g in scenario.goals}
        assert specs == {"fully", "under"}
        assert cats == {"mapping", "exploration"}


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        cfg = GenConfig(env_size=8, n_tasks=3, dialect="spine")
        scenario = procedural_generate(cfg, 77, "scenario_77_0")
        path = save_scenario(scenario, tmp_path)
        assert path.name == "scenario_77_0.json"
        loaded = load_scenario(path)
        assert loaded.to_dict() == scenario.to_dict()

    def test_batch_filenames_follow_convention(self, tmp_path):
        cfg = GenConfig(env_size=6, n_tasks=2, dialect="spine")
        scenarios = batch_generate(cfg, base_seed=4, count=3)
        names = [s.scenario_id for s in scenarios]
        assert names == ["scenario_4_0", "scenario_4_1", "scenario_4_2"]
        assert len({json.dumps(s.to_dict()) for s in scenarios}) == 3
