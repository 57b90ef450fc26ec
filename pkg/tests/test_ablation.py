import csv
import io
import json

from keygram.ablation import (
    gates_csv,
    greedy_layer_search,
    scores_csv,
    summary_json,
    weighted_score,
)
from keygram.config import (
    AblationConfig,
    BackboneConfig,
    Config,
    FusionConfig,
    MemoryConfig,
    TaskConfig,
    TrainConfig,
)

MICRO = Config(
    memory=MemoryConfig(slots=4, heads=2, head_width=8, capacity=31),
    fusion=FusionConfig(conv_span=4, slot_groups=4),
    backbone=BackboneConfig(blocks=3, width=16, mlp_ratio=2),
    task=TaskConfig(attributes=4, objects=6, places=6, target_labels=4),
    train=TrainConfig(steps=15, batch_size=8, eval_every=15, eval_samples=32, seed=0),
    ablation=AblationConfig(candidate_layers=(0, 1, 2), stages=2, steps=15,
                            batch_size=8),
)


def test_weighted_score_default_ratio():
    assert weighted_score(1.0, 0.0, 1.0, 9.0) == 10.0
    assert weighted_score(0.0, 1.0, 1.0, 9.0) == 90.0
    assert weighted_score(1.0, 1.0, 1.0, 9.0) == 100.0


def test_greedy_search_structure():
    report = greedy_layer_search(MICRO)

    assert report.rows[0].label == "vanilla"
    assert report.rows[0].layers == ()

    # stage 1 evaluates every candidate exactly once, including layer 0
    stage1 = [r for r in report.rows if r.stage == 1]
    assert sorted(r.layers for r in stage1) == [(0,), (1,), (2,)]

    # monotone best score across stages
    assert report.stage_best == sorted(report.stage_best)
    assert report.best_score == max(r.score for r in report.rows)

    # selected set is one of the evaluated configurations (or empty)
    evaluated = {r.layers for r in report.rows}
    assert report.selected_layers in evaluated


def test_single_candidate_single_stage():
    from dataclasses import replace
    cfg = replace(MICRO, ablation=replace(MICRO.ablation, candidate_layers=(1,),
                                          stages=1))
    report = greedy_layer_search(cfg)
    labels = [r.label for r in report.rows]
    assert labels == ["vanilla", "kg(1)"]


def test_gate_profile_covers_stage_one_sweep():
    report = greedy_layer_search(MICRO)
    layers = [entry["layer"] for entry in report.gate_profile]
    assert layers == [0, 1, 2]
    peak = max(entry["normalized_gate"] for entry in report.gate_profile)
    assert peak == 1.0


def test_csv_and_json_outputs_parse():
    report = greedy_layer_search(MICRO)

    rows = list(csv.DictReader(io.StringIO(scores_csv(report))))
    assert rows[0]["config"] == "vanilla"
    assert {"stage", "config", "layers", "easy", "hard", "weighted_score"} == set(rows[0])

    gates = list(csv.DictReader(io.StringIO(gates_csv(report))))
    assert len(gates) == 3
    float(gates[0]["mean_gate"])

    summary = json.loads(summary_json(report))
    assert summary["selected_layers"] == list(report.selected_layers)
    assert len(summary["evaluated"]) == len(report.rows)
