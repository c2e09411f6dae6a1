"""Dataset export: loss masking, determinism, verification."""
from __future__ import annotations

import json

import pytest

from planforge.client import BackendConfig, make_client
from planforge.dataset import episode_to_record, export, verify_dataset
from planforge.elicit import ElicitConfig, collect_dataset, run_episode
from planforge.envs import scene_graph_from_dict
from planforge.errors import EmptyDataset
from planforge.oracle import oracle_for_scenarios
from planforge.scenarios import GenConfig, Scenario, procedural_generate

from conftest import load_fixture
from test_elicitation import write_replay_transcript


def _oracle_episodes(n_scenarios=3, n_tasks=4, base_seed=1):
    cfg = GenConfig(env_size=10, n_tasks=n_tasks, dialect="spine")
    scenarios = [
        procedural_generate(cfg, 100 + i, f"scenario_{100 + i}_0") for i in range(n_scenarios)
    ]
    client = make_client(
        BackendConfig(kind="oracle"), oracle_planner=oracle_for_scenarios(scenarios)
    )
    episodes, _ = collect_dataset(
        client, scenarios, ElicitConfig(max_iterations=15), base_seed, None
    )
    return episodes


class TestRecords:
    def test_trace_episode_yields_four_loss_turns(self, tmp_path, boardwalk_scenario_raw):
        trace = load_fixture("boardwalk_lamppost_trace.json")
        scenario = Scenario(
            scenario_id="boardwalk",
            dialect="spine",
            description=boardwalk_scenario_raw["description"],
            environment=scene_graph_from_dict(boardwalk_scenario_raw["graph"]),
            tasks=[trace["task"]],
        )
        write_replay_transcript(tmp_path / "boardwalk_task0.jsonl", trace["responses"])
        client = make_client(BackendConfig(kind="replay", replay_dir=str(tmp_path)))
        episode = run_episode(
            client, scenario, trace["task"],
            ElicitConfig(max_iterations=10, mask_fraction_range=(1.0, 1.0)), 1, 0,
        )
        record = episode_to_record(episode)
        assistant = [t for t in record["turns"] if t["role"] == "assistant"]
        assert len(assistant) == 4
        assert all(t["loss"] for t in assistant)
        user = [t for t in record["turns"] if t["role"] == "user"]
        assert all(not t["loss"] for t in user)
        assert record["turns"][0]["role"] == "user"
        assert record["meta"]["terminal"] == "answered"

    def test_loss_turns_reproduce_action_sequence(self):
        episodes = _oracle_episodes(1, 3)
        for episode in episodes:
            record = episode_to_record(episode)
            flat = []
            from planforge.plan_io import parse_response

            for turn in record["turns"]:
                if turn["loss"]:
                    resp = parse_response(turn["content"], record["dialect"])
                    flat.extend(c.render("spine") for c in resp.plan)
            assert flat == episode.action_sequence()

    def test_parse_error_turns_fold_observations(self):
        from planforge.elicit import Episode, Turn
        from planforge.emulator import WorldState
        from planforge.envs import SceneGraph
        from planforge.plan_io import parse_response

        answer = '{"plan": "[answer(ok)]"}'
        world = WorldState(dialect="spine", full=SceneGraph())
        episode = Episode(
            scenario_id="s", dialect="spine", task="t", task_index=0, seed=0,
            mask=None, system_prompt="sys",
            turns=[
                Turn("obs1", "garbage", None, None),
                Turn("feedback about the garbage", answer,
                     parse_response(answer, "spine"), answer),
            ],
            terminal="answered", valid=True, final_world=world,
        )
        record = episode_to_record(episode)
        assert len(record["turns"]) == 2
        assert record["turns"][0]["content"] == "obs1\nfeedback about the garbage"

    def test_all_garbage_episode_has_no_record(self):
        from planforge.elicit import Episode, Turn
        from planforge.emulator import WorldState
        from planforge.envs import SceneGraph

        world = WorldState(dialect="spine", full=SceneGraph())
        episode = Episode(
            scenario_id="s", dialect="spine", task="t", task_index=0, seed=0,
            mask=None, system_prompt="sys",
            turns=[Turn("obs1", "garbage", None, None)],
            terminal="timeout", valid=True, final_world=world,
        )
        assert episode_to_record(episode) is None


class TestExport:
    def test_split_ratio_one_puts_everything_in_train(self, tmp_path):
        episodes = _oracle_episodes(1, 4)
        result = export(episodes, 1.0, 7, tmp_path)
        assert result.summary["split_sizes"] == {"train": 4, "val": 0}
        assert result.val_path.read_text() == ""

    def test_deterministic_bytes(self, tmp_path):
        episodes = _oracle_episodes(2, 5)
        a = export(episodes, 0.8, 3, tmp_path / "a")
        b = export(episodes, 0.8, 3, tmp_path / "b")
        assert a.train_path.read_bytes() == b.train_path.read_bytes()
        assert a.val_path.read_bytes() == b.val_path.read_bytes()
        assert a.summary == b.summary

    def test_ninety_ten_split(self, tmp_path):
        episodes = _oracle_episodes(5, 4)
        result = export(episodes, 0.9, 11, tmp_path)
        assert result.summary["split_sizes"] == {"train": 18, "val": 2}

    def test_empty_raises(self, tmp_path):
        with pytest.raises(EmptyDataset):
            export([], 0.9, 1, tmp_path)

    def test_summary_statistics(self, tmp_path):
        episodes = _oracle_episodes(2, 4)
        result = export(episodes, 1.0, 1, tmp_path)
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["n_records"] == 8
        assert "answer" in summary["action_histogram"]
        assert summary["trajectory_length"]["mean"] >= 1


class TestVerify:
    def test_exported_file_is_clean(self, tmp_path):
        episodes = _oracle_episodes(2, 3)
        result = export(episodes, 0.9, 5, tmp_path)
        assert verify_dataset(result.train_path) == []
        assert verify_dataset(result.val_path) == []

    def test_corrupted_loss_flag_detected(self, tmp_path):
        episodes = _oracle_episodes(1, 2)
        result = export(episodes, 1.0, 5, tmp_path)
        lines = result.train_path.read_text().splitlines()
        record = json.loads(lines[0])
        record["turns"][1]["loss"] = False
        lines[0] = json.dumps(record, ensure_ascii=False)
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        violations = verify_dataset(bad)
        assert any(v.rule == "LossMaskViolation" for v in violations)

    def test_unparseable_assistant_detected(self, tmp_path):
        episodes = _oracle_episodes(1, 2)
        result = export(episodes, 1.0, 5, tmp_path)
        lines = result.train_path.read_text().splitlines()
        record = json.loads(lines[0])
        record["turns"][1]["content"] = "garbage("
        lines[0] = json.dumps(record, ensure_ascii=False)
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        violations = verify_dataset(bad)
        assert any(v.rule == "UnparseableAction" for v in violations)

    def test_broken_alternation_detected(self, tmp_path):
        episodes = _oracle_episodes(1, 2)
        result = export(episodes, 1.0, 5, tmp_path)
        lines = result.train_path.read_text().splitlines()
        record = json.loads(lines[0])
        record["turns"].insert(0, {"role": "assistant", "content": "x", "loss": True})
        lines[0] = json.dumps(record, ensure_ascii=False)
        bad = tmp_path / "bad.jsonl"
        bad.write_text("\n".join(lines) + "\n")
        violations = verify_dataset(bad)
        assert any(v.rule == "BrokenAlternation" for v in violations)
