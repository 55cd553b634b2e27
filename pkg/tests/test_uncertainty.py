from itertools import combinations

import numpy as np
import pytest
from pydantic import ValidationError

from models.core import Budget, Dataset, FlowField, Sample
from models.errors import RecordMismatchError, TableFormatError
from models.uncertainty import (
    ScoreMetric,
    ScoreRecord,
    Selection,
    Strategy,
    read_scores_csv,
    read_selection,
    records_for_metric,
    score,
    select,
    write_scores_csv,
    write_selection,
)


def tiny_dataset(constant_image, ids, groups=None):
    groups = groups or {}
    return Dataset([
        Sample(sample_id, constant_image(4, 4), constant_image(4, 4), group=groups.get(sample_id, sample_id))
        for sample_id in ids
    ])


def records_from(values, metric=ScoreMetric.PHOTO_LOSS):
    return [ScoreRecord(sample_id=sample_id, metric=metric, value=value) for sample_id, value in values.items()]


EXAMPLE = {"a": 0.9, "b": 0.5, "c": 0.7, "d": 0.1}


def test_score_occlusion_ratio(constant_image, cfg):
    sample = Sample("s", constant_image(20, 4), constant_image(20, 4))
    record = score(sample, FlowField.constant(20, 4, 5.0, 0.0), FlowField.constant(20, 4, -5.0, 0.0),
                   ScoreMetric.OCC_RATIO, cfg)
    assert record.value == pytest.approx(0.25)
    assert record.sample_id == "s"


def test_score_flow_statistics(constant_image, cfg):
    sample = Sample("s", constant_image(6, 6), constant_image(6, 6))
    flow = FlowField.constant(6, 6, 3.0, 4.0)
    assert score(sample, flow, flow, ScoreMetric.FLOW_NORM, cfg).value == pytest.approx(5.0)
    assert score(sample, flow, flow, ScoreMetric.FLOW_GRAD_NORM, cfg).value == 0.0


def test_score_image_metrics_need_no_flow(constant_image, cfg):
    sample = Sample("s", constant_image(32, 32), constant_image(32, 32))
    for metric in (ScoreMetric.IMG_GRAD_NORM, ScoreMetric.TEXTURE_SCORE, ScoreMetric.COLOR_CHANGE):
        assert score(sample, None, None, metric, cfg).value == 0.0


def test_score_photo_loss(shifted_sample, cfg):
    moving = shifted_sample()
    still = Sample("still", moving.frame1, moving.frame1)
    zeros = FlowField.zeros(64, 64)
    assert score(still, zeros, zeros, ScoreMetric.PHOTO_LOSS, cfg).value == pytest.approx(0.0, abs=1e-12)
    assert score(moving, zeros, zeros, ScoreMetric.PHOTO_LOSS, cfg).value > 0.0


def test_flow_metrics_require_estimates(constant_image, cfg):
    sample = Sample("s", constant_image(8, 8), constant_image(8, 8))
    with pytest.raises(ValueError):
        score(sample, None, None, ScoreMetric.OCC_RATIO, cfg)


def test_score_record_rejects_non_finite_values():
    with pytest.raises(ValidationError):
        ScoreRecord(sample_id="a", metric=ScoreMetric.OCC_RATIO, value=float("nan"))


def test_textured_metrics_rank_in_reverse():
    record = ScoreRecord(sample_id="a", metric=ScoreMetric.TEXTURE_SCORE, value=2.0)
    assert record.ranking_value == -2.0
    assert ScoreRecord(sample_id="a", metric=ScoreMetric.OCC_RATIO, value=2.0).ranking_value == 2.0


def test_topk_example(constant_image):
    dataset = tiny_dataset(constant_image, EXAMPLE)
    selection = select(records_from(EXAMPLE), dataset, Budget(ratio=0.5), Strategy.TOPK, seed=0)
    assert selection.chosen == ["a", "c"]


def test_topk_prefers_low_texture(constant_image):
    dataset = tiny_dataset(constant_image, EXAMPLE)
    records = records_from(EXAMPLE, metric=ScoreMetric.IMG_GRAD_NORM)
    assert select(records, dataset, Budget(ratio=0.5), Strategy.TOPK, seed=0).chosen == ["d", "b"]


def test_topk_breaks_ties_by_id(constant_image):
    values = {"b": 1.0, "a": 1.0, "c": 0.0}
    dataset = tiny_dataset(constant_image, values)
    assert select(records_from(values), dataset, Budget(ratio=0.3), Strategy.TOPK, seed=0).chosen == ["a"]


def test_occ2x_draws_from_twice_the_budget(constant_image):
    dataset = tiny_dataset(constant_image, EXAMPLE)
    for seed in range(10):
        chosen = select(records_from(EXAMPLE), dataset, Budget(ratio=0.25), Strategy.OCC2X, seed=seed).chosen
        assert len(chosen) == 1
        assert set(chosen) <= {"a", "c"}


def test_zero_and_full_budgets(constant_image):
    dataset = tiny_dataset(constant_image, EXAMPLE)
    for strategy in Strategy:
        assert select(records_from(EXAMPLE), dataset, Budget(ratio=0.0), strategy, seed=0).chosen == []
        full = select(records_from(EXAMPLE), dataset, Budget(ratio=1.0), strategy, seed=0).chosen
        assert sorted(full) == sorted(EXAMPLE)


def test_random_selection_is_seeded_and_nested(constant_image):
    ids = [f"s{i}" for i in range(20)]
    dataset = tiny_dataset(constant_image, ids)
    small = select([], dataset, Budget(ratio=0.2), Strategy.RANDOM, seed=3).chosen
    large = select([], dataset, Budget(ratio=0.5), Strategy.RANDOM, seed=3).chosen
    assert len(small) == 4
    assert large[:4] == small
    assert select([], dataset, Budget(ratio=0.5), Strategy.RANDOM, seed=3).chosen == large


def test_selection_is_invariant_to_monotone_rescaling(rng, constant_image):
    values = {f"s{i}": float(v) for i, v in enumerate(rng.random(12))}
    dataset = tiny_dataset(constant_image, values, groups={k: f"g{i // 3}" for i, k in enumerate(values)})
    rescaled = {k: 3.0 * v ** 3 + 1.0 for k, v in values.items()}
    for strategy in (Strategy.TOPK, Strategy.OCC2X, Strategy.GROUPED_TOPK):
        original = select(records_from(values), dataset, Budget(ratio=0.4), strategy, seed=5)
        changed = select(records_from(rescaled), dataset, Budget(ratio=0.4), strategy, seed=5)
        assert original.chosen == changed.chosen


def test_selection_oracles_on_random_tables(rng, constant_image):
    for _ in range(100):
        n = int(rng.integers(1, 9))
        ids = [f"s{i}" for i in range(n)]
        values = {sample_id: float(rng.random()) for sample_id in ids}
        groups = {sample_id: f"g{int(rng.integers(0, 3))}" for sample_id in ids}
        dataset = tiny_dataset(constant_image, ids, groups)
        records = records_from(values)
        budget = Budget(ratio=float(rng.choice([0.1, 0.25, 0.5, 0.75, 1.0])))
        k = budget.count(n)

        best = max(combinations(ids, k), key=lambda subset: sum(values[i] for i in subset))
        topk = select(records, dataset, budget, Strategy.TOPK, seed=0).chosen
        assert set(topk) == set(best)

        pool = sorted(ids, key=lambda i: -values[i])[:min(2 * k, n)]
        occ2x = select(records, dataset, budget, Strategy.OCC2X, seed=int(rng.integers(0, 100))).chosen
        assert len(occ2x) == k
        assert set(occ2x) <= set(pool)

        members = {}
        for sample_id in ids:
            members.setdefault(groups[sample_id], set()).add(sample_id)
        ranked_groups = sorted(members, key=lambda g: (-max(values[i] for i in members[g]), g))
        expected = set()
        for group in ranked_groups:
            if len(expected) + len(members[group]) > k:
                break
            expected |= members[group]
        grouped = select(records, dataset, budget, Strategy.GROUPED_TOPK, seed=0).chosen
        assert set(grouped) == expected
        assert len(grouped) <= k
        for group, group_ids in members.items():
            assert group_ids <= set(grouped) or not group_ids & set(grouped)


def test_select_rejects_mismatched_records(constant_image):
    dataset = tiny_dataset(constant_image, EXAMPLE)
    mixed = records_from(EXAMPLE)[:3] + records_from({"d": 0.1}, metric=ScoreMetric.OCC_RATIO)
    with pytest.raises(RecordMismatchError):
        select(mixed, dataset, Budget(ratio=0.5), Strategy.TOPK, seed=0)
    with pytest.raises(RecordMismatchError):
        select(records_from(EXAMPLE)[:3], dataset, Budget(ratio=0.5), Strategy.TOPK, seed=0)
    with pytest.raises(RecordMismatchError):
        select([], dataset, Budget(ratio=0.5), Strategy.TOPK, seed=0)


def test_selection_rejects_duplicates():
    with pytest.raises(ValidationError):
        Selection(strategy=Strategy.TOPK, ratio=0.5, seed=0, chosen=["a", "a"])


def test_records_for_metric():
    records = records_from({"a": 1.0}) + records_from({"a": 0.5}, metric=ScoreMetric.OCC_RATIO)
    assert [r.value for r in records_for_metric(records, "occ_ratio")] == [0.5]


def test_scores_csv_round_trip(tmp_path):
    records = records_from({"a": 0.125, "b": 3.5}) + records_from({"a": 0.25}, metric=ScoreMetric.FLOW_NORM)
    path = str(tmp_path / "scores.csv")
    write_scores_csv(records, path)
    assert read_scores_csv(path) == records


@pytest.mark.parametrize("text", [
    "",
    "sample_id,value\na,1.0\n",
    "sample_id,metric,value\na,photo_loss,high\n",
    "sample_id,metric,value\na,sharpness,1.0\n",
])
def test_malformed_scores_csv(tmp_path, text):
    path = tmp_path / "scores.csv"
    path.write_text(text)
    with pytest.raises(TableFormatError):
        read_scores_csv(str(path))


def test_selection_json_round_trip(tmp_path):
    selection = Selection(strategy=Strategy.OCC2X, ratio=0.2, seed=4, chosen=["c", "a"])
    path = str(tmp_path / "selection.json")
    write_selection(selection, path)
    assert read_selection(path) == selection
