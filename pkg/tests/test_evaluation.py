import json

import jsonschema
import numpy as np
import pytest

from spectraj import model as M
from spectraj.data import ScenarioTensor
from spectraj.evaluation import (
    METRIC_REPORT_SCHEMA,
    MetricReport,
    ade,
    cross_vehicle_std,
    evaluate,
    filtering_study,
    format_ablation,
    run_q_ablation,
)
from spectraj.spectral import factor_bases, gft_forward, gft_inverse


def test_ade_fde_examples():
    z = np.zeros((2, 10))
    from spectraj.evaluation import fde
    assert ade(z, z) == 0 and fde(z, z) == 0
    one = z.copy()
    one[0] = 1
    assert ade(one, z) == 1.0
    tri = z.copy()
    tri[0], tri[1] = 3, 4
    assert ade(tri, z) == 5.0 and fde(tri, z) == 5.0
    last = z.copy()
    last[1, -1] = 2
    assert fde(last, z) == 2.0 and ade(last, z) == pytest.approx(2 / 10)
    with pytest.raises(ValueError):
        ade(z, np.zeros((2, 9)))


def test_metric_symmetry_and_translation(rng):
    from spectraj.evaluation import fde
    a, b = rng.normal(size=(2, 20)), rng.normal(size=(2, 20))
    assert ade(a, b) == ade(b, a) and fde(a, b) == fde(b, a)
    shift = np.array([[5.0], [-2.0]])
    assert ade(a + shift, b + shift) == pytest.approx(ade(a, b), abs=1e-12)
    d = np.hypot(*(a - b))
    assert ade(a, b) <= d.max()


def test_evaluate_report(small_dataset):
    res = M.train(small_dataset, M.TrainConfig(epochs=1, p=4, q=10))
    rep = evaluate(res.params, small_dataset)
    assert rep.scenario_count == len(small_dataset)
    assert set(rep.per_maneuver) == {"keep-lane", "lane-change-left", "lane-change-right"}
    assert sum(v["count"] for v in rep.per_maneuver.values()) == len(small_dataset)
    jsonschema.validate(json.loads(rep.to_json()), METRIC_REPORT_SCHEMA)
    text = rep.to_text().splitlines()
    assert text[0].split() == ["subset", "count", "ADE", "[m]", "FDE", "[m]"]
    assert len(text) == 5
    assert 0 <= rep.ade_m and rep.fde_m >= 0


def test_evaluate_empty():
    with pytest.raises(ValueError):
        evaluate(M.init_params(9, 50, 4, 4), [])


def test_schema_rejects_negative():
    bad = MetricReport(-1.0, 0.0, 1, {}).to_dict()
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate(bad, METRIC_REPORT_SCHEMA)


def test_q_ablation_rows_and_determinism(small_dataset):
    cfg = M.TrainConfig(epochs=2, p=3, batch_size=8)
    rows = run_q_ablation(small_dataset, [5, 50], cfg)
    assert [r.q for r in rows] == [5, 50]
    again = run_q_ablation(small_dataset, [5, 50], cfg)
    assert rows == again
    table = format_ablation(rows).splitlines()
    assert len(table) == 3
    with pytest.raises(ValueError):
        run_q_ablation(small_dataset, [51], cfg)


def four_vehicle_scene(rng, h=40):
    t = np.arange(h) / 10
    v = np.zeros((4, 4, h))
    speeds = np.array([30.0, 27.0, 33.0, 29.0])
    v[0] = speeds[:, None] * t + rng.normal(0, 0.1, size=(4, h))
    v[1] = np.array([0.0, 3.5, -3.5, 0.0])[:, None]
    v[2] = speeds[:, None] + rng.normal(0, 0.2, size=(4, h))
    v[3] = rng.normal(0, 0.1, size=(4, h))
    return ScenarioTensor(v, 10.0, np.ones(4, bool))


def test_filtering_study(rng):
    sc = four_vehicle_scene(rng)
    variants = filtering_study(sc, [range(4), [0, 1, 2], [0]])
    bs, bt = factor_bases(4, 40)
    assert np.array_equal(variants[0].filtered, gft_inverse(gft_forward(sc, bs, bt), bs, bt))
    assert np.abs(variants[0].filtered - sc.values).max() < 1e-9
    assert cross_vehicle_std(variants[2].filtered).max() < 1e-9
    var_full = cross_vehicle_std(sc.values) ** 2
    var_drop = cross_vehicle_std(variants[1].filtered) ** 2
    assert var_drop.mean() < var_full.mean()
    assert np.all(var_drop <= var_full + 1e-12)
    with pytest.raises(ValueError):
        filtering_study(sc, [[7]])
