import numpy as np
import pytest

from models.analysis import (
    CurvePoint,
    SampleMetrics,
    corr_matrix,
    curve_fixture,
    epe,
    fixture_is_monotone,
    fl_rate,
    pearson,
    read_corr_csv,
    read_curve_csv,
    read_metrics_csv,
    score_table,
    write_corr_csv,
    write_curve_csv,
    write_metrics_csv,
)
from models.core import FlowField
from models.errors import TableFormatError, UnknownFixtureError
from models.fixtures import list_fixtures
from models.uncertainty import ScoreMetric, ScoreRecord


def test_epe():
    assert epe(FlowField.constant(4, 4, 3.0, 4.0), FlowField.zeros(4, 4)) == pytest.approx(5.0)
    flow = FlowField.constant(4, 4, 1.0, 2.0)
    assert epe(flow, flow) == 0.0


def test_epe_ignores_invalid_pixels():
    valid = np.zeros((2, 2), dtype=bool)
    valid[0, 0] = True
    gt = FlowField(np.zeros((2, 2, 2)), valid=valid)
    est = FlowField(np.array([[[1.0, 0.0], [9.0, 9.0]], [[9.0, 9.0], [9.0, 9.0]]]))
    assert epe(est, gt) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        epe(est, FlowField(np.zeros((2, 2, 2)), valid=np.zeros((2, 2), dtype=bool)))


def test_fl_rate():
    gt = FlowField.constant(4, 1, 100.0, 0.0)
    uv = np.full((1, 4, 2), (100.0, 0.0))
    uv[0, 0] = (106.0, 0.0)
    uv[0, 1] = (104.0, 0.0)
    assert fl_rate(FlowField(uv), gt) == pytest.approx(25.0)
    assert fl_rate(FlowField.constant(4, 1, 3.5, 0.0), FlowField.zeros(4, 1)) == pytest.approx(100.0)


def two_pass_pearson(xs, ys):
    n = len(xs)
    mx, my = sum(xs) / n, sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / (sxx * syy) ** 0.5


def test_pearson(rng):
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0)
    assert pearson([1, 1, 1], [1, 2, 3]) == 0.0
    assert pearson([1.0], [2.0]) == 0.0
    for _ in range(20):
        xs, ys = rng.normal(size=10).tolist(), rng.normal(size=10).tolist()
        assert pearson(xs, ys) == pytest.approx(two_pass_pearson(xs, ys), abs=1e-12)
        assert pearson(xs, ys) == pytest.approx(pearson(ys, xs))
    with pytest.raises(ValueError):
        pearson([1, 2], [1, 2, 3])


def test_score_table_and_correlations():
    records = [
        ScoreRecord(sample_id=sample_id, metric=metric, value=value)
        for sample_id, occ, photo in (("a", 0.1, 2.0), ("b", 0.2, 1.0), ("c", 0.4, 3.0))
        for metric, value in ((ScoreMetric.OCC_RATIO, occ), (ScoreMetric.PHOTO_LOSS, photo))
    ]
    table = score_table(records)
    assert list(table.index) == ["a", "b", "c"]
    assert table.loc["b", "occ_ratio"] == 0.2

    matrix = corr_matrix(records, {"a": 1.0, "b": 2.0, "c": 4.0})
    assert list(matrix.columns) == ["occ_ratio", "photo_loss", "epe"]
    np.testing.assert_allclose(np.diag(matrix.to_numpy()), 1.0)
    np.testing.assert_allclose(matrix.to_numpy(), matrix.to_numpy().T)
    assert matrix.loc["occ_ratio", "epe"] == pytest.approx(1.0)
    assert matrix.loc["photo_loss", "epe"] == pytest.approx(pearson([2.0, 1.0, 3.0], [1.0, 2.0, 4.0]))


def test_corr_matrix_drops_samples_without_epe():
    records = [ScoreRecord(sample_id=s, metric=ScoreMetric.FLOW_NORM, value=v) for s, v in
               (("a", 1.0), ("b", 2.0), ("c", 3.0), ("d", 0.0))]
    matrix = corr_matrix(records, {"a": 1.0, "b": 2.0, "c": 3.0})
    assert matrix.loc["flow_norm", "epe"] == pytest.approx(1.0)


def test_label_ratio_fixtures():
    clean = curve_fixture("sintel-clean")
    assert [p.value for p in clean] == [1.906, 1.850, 1.776, 1.691, 1.643, 1.625, 1.581, 1.651]
    assert [p.ratio for p in clean] == [0.0, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0]
    kitti = curve_fixture("kitti-2015-fl")
    assert kitti[0].value == 12.742
    assert kitti[-1].value == 9.448
    assert {p.metric_name for p in kitti} == {"fl"}


def test_fixture_monotonicity():
    assert fixture_is_monotone(curve_fixture("flyingchairs"))
    assert not fixture_is_monotone(curve_fixture("sintel-clean"))


def test_active_learning_fixture_layout():
    points = curve_fixture("al-sintel-clean")
    assert {p.metric_name for p in points} == {"random", "photo_loss", "occ_ratio", "flow_grad_norm"}
    occ = [p for p in points if p.metric_name == "occ_ratio"]
    assert [(p.ratio, p.value) for p in occ] == [(0.0, 1.906), (0.05, 1.767), (0.1, 1.686), (0.2, 1.643),
                                                  (1.0, 1.651)]


def test_every_listed_fixture_loads():
    names = list_fixtures()
    assert "ablation-sintel-final" in names
    for name in names:
        assert curve_fixture(name)


def test_unknown_fixture():
    with pytest.raises(UnknownFixtureError):
        curve_fixture("middlebury")


def test_csv_round_trips(tmp_path):
    points = curve_fixture("sintel-final")
    write_curve_csv(points, str(tmp_path / "curve.csv"))
    assert read_curve_csv(str(tmp_path / "curve.csv")) == points

    rows = [SampleMetrics(sample_id="s0001", epe=0.75, fl=12.5), SampleMetrics(sample_id="s0002", epe=2.0, fl=0.0)]
    write_metrics_csv(rows, str(tmp_path / "metrics.csv"))
    assert read_metrics_csv(str(tmp_path / "metrics.csv")) == rows

    records = [ScoreRecord(sample_id=s, metric=ScoreMetric.OCC_RATIO, value=v) for s, v in (("a", 0.5), ("b", 0.25))]
    matrix = corr_matrix(records, {"a": 1.0, "b": 3.0})
    write_corr_csv(matrix, str(tmp_path / "corr.csv"))
    reread = read_corr_csv(str(tmp_path / "corr.csv"))
    assert list(reread.columns) == ["occ_ratio", "epe"]
    np.testing.assert_allclose(reread.to_numpy(), matrix.to_numpy())


def test_curve_point_validation():
    with pytest.raises(ValueError):
        CurvePoint(ratio=1.5, metric_name="epe", value=1.0)


def test_malformed_tables(tmp_path):
    metrics = tmp_path / "metrics.csv"
    metrics.write_text("sample_id,epe\ns0001,0.5\n")
    with pytest.raises(TableFormatError):
        read_metrics_csv(str(metrics))

    curve = tmp_path / "curve.csv"
    curve.write_text("ratio,metric,value\n1.5,epe,1.0\n")
    with pytest.raises(TableFormatError):
        read_curve_csv(str(curve))

    corr = tmp_path / "corr.csv"
    corr.write_text("name,occ_ratio,epe\nocc_ratio,1.0,strong\nepe,0.5,1.0\n")
    with pytest.raises(TableFormatError):
        read_corr_csv(str(corr))
