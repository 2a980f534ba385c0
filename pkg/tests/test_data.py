import dataclasses

import numpy as np
import pytest

from highway_fixture import write_fixture
from spectraj.data import (
    MANEUVERS,
    IngestConfig,
    LabeledScenario,
    ScenarioFormatError,
    ScenarioTensor,
    SyntheticSpec,
    Track,
    assemble_neighbor_grid,
    balanced_split,
    generate_dataset,
    generate_synthetic,
    ingest_highway_csv,
    label_maneuver,
    lane_change_profile,
    load_tracks,
    read_scenarios,
    select_neighbors,
    upsample_observation,
    write_scenarios,
)


def _tensor(series, f=10.0):
    v = np.zeros((4, 1, len(series)))
    v[0, 0] = series
    return ScenarioTensor(v, f, np.array([True]))


def _straight(tid, lane, x0, v=30.0, n=100, f=25.0):
    t = np.arange(n) / f
    return Track(tid, np.arange(n), x0 + v * t, np.full(n, -3.5 * lane), np.full(n, v), np.zeros(n),
                 np.full(n, lane))


def test_scenario_tensor_validation():
    with pytest.raises(ValueError):
        ScenarioTensor(np.zeros((3, 2, 4)), 10.0, [True, True])
    with pytest.raises(ValueError):
        ScenarioTensor(np.full((4, 2, 4), np.nan), 10.0, [True, True])
    with pytest.raises(ValueError):
        ScenarioTensor(np.zeros((4, 2, 4)), 10.0, [False, True])
    with pytest.raises(ValueError):
        ScenarioTensor(np.zeros((4, 2, 4)), 0.0, [True, True])


def test_upsample_closed_form():
    out = upsample_observation(_tensor([0.0, 2.0]), 4)
    np.testing.assert_allclose(out.values[0, 0], [0, 2 / 3, 4 / 3, 2], atol=1e-15)
    const = upsample_observation(_tensor(np.full(5, 3.0)), 9)
    np.testing.assert_array_equal(const.values[0, 0], np.full(9, 3.0))


def test_upsample_highd_lengths(rng):
    series = np.cumsum(rng.uniform(size=75))
    out = upsample_observation(_tensor(series, 25.0), 125)
    assert out.n_steps == 125
    vals = out.values[0, 0]
    assert vals[0] == series[0] and vals[-1] == series[-1]
    assert np.all(np.diff(vals) >= 0)


def test_upsample_rejects_shrinking():
    with pytest.raises(ValueError):
        upsample_observation(_tensor(np.zeros(5)), 4)


@pytest.mark.parametrize(
    "lanes,expected",
    [
        ([3, 3, 3, 3], "keep-lane"),
        ([3, 3, 2, 2], "lane-change-left"),
        ([3, 4, 4], "lane-change-right"),
        ([3, 2, 2, 3], "lane-change-left"),  # overtake-return: first change wins
        ([3, 4, 3], "lane-change-right"),
    ],
)
def test_label_maneuver(lanes, expected):
    assert label_maneuver(lanes) == expected


@pytest.mark.parametrize("lanes", [[], [3.0, np.nan]])
def test_label_maneuver_missing(lanes):
    with pytest.raises(ValueError):
        label_maneuver(lanes)


def _fake(man, i):
    return LabeledScenario(f"{man}-{i}", _tensor([0.0, 1.0]), None, man, 2)


def test_balanced_split_arithmetic():
    data = [_fake(m, i) for m, n in zip(MANEUVERS, (100, 50, 50)) for i in range(n)]
    train, test = balanced_split(data, 0.7, seed=3)
    assert len(train) == 105 and len(test) == 45
    for part, per in ((train, 35), (test, 15)):
        counts = [sum(s.maneuver == m for s in part) for m in MANEUVERS]
        assert counts == [per] * 3
    assert not {s.scenario_id for s in train} & {s.scenario_id for s in test}
    again = balanced_split(data, 0.7, seed=3)
    assert [s.scenario_id for s in again[0]] == [s.scenario_id for s in train]


def test_balanced_split_one_per_class():
    train, test = balanced_split([_fake(m, 0) for m in MANEUVERS], 0.7)
    assert len(train) == 0 and len(test) == 3


def test_balanced_split_errors():
    with pytest.raises(ValueError):
        balanced_split([])
    with pytest.raises(ValueError):
        balanced_split([_fake("keep-lane", 0), _fake("lane-change-left", 0)])


def test_target_alone():
    tracks = {1: _straight(1, 2, 0.0)}
    st = assemble_neighbor_grid(tracks, 1, 74, 75, 25.0)
    assert st.slot_mask.tolist() == [True] + [False] * 8
    assert np.all(st.values[:, 1:] == 0)
    assert st.values[0, 0, -1] == 0 and st.values[1, 0, -1] == 0


def test_leader_20m_ahead():
    tracks = {1: _straight(1, 2, 0.0), 2: _straight(2, 2, 20.0), 3: _straight(3, 1, 40.0),
              4: _straight(4, 3, -2.0)}
    slots = select_neighbors(tracks, 1, 74)
    assert slots[1] == 2 and slots[3] == 3 and slots[7] == 4
    st = assemble_neighbor_grid(tracks, 1, 74, 75, 25.0)
    assert st.values[0, 1, -1] == pytest.approx(20.0, abs=1e-9)
    assert st.values[0, 3, -1] == pytest.approx(40.0, abs=1e-9)
    assert st.values[0, 0, -1] == 0 and st.values[1, 0, -1] == 0


def test_grid_errors():
    tracks = {1: _straight(1, 2, 0.0)}
    with pytest.raises(ValueError):
        assemble_neighbor_grid(tracks, 1, 50, 75, 25.0)  # insufficient history
    with pytest.raises(ValueError):
        assemble_neighbor_grid(tracks, 1, 500, 75, 25.0)
    with pytest.raises(ValueError):
        assemble_neighbor_grid(tracks, 9, 80, 75, 25.0)


def test_synthetic_constant_velocity_truth():
    sc = generate_synthetic(SyntheticSpec(noise=0.0, speed_range=(30.0, 30.0), n_vehicles=1, seed=5))
    t = np.arange(1, sc.h_pred + 1) / 10.0
    np.testing.assert_allclose(sc.ground_truth[0], 30.0 * t, atol=1e-12)
    np.testing.assert_allclose(sc.ground_truth[1], 0.0, atol=1e-12)


def test_lane_change_profile_monotone():
    t = np.linspace(-1, 7, 400)
    y = lane_change_profile(t, 0.0, 5.0, 3.5)
    assert np.all(np.diff(y) >= 0)
    assert y[0] == 0 and y[-1] == pytest.approx(3.5)


@pytest.mark.parametrize("man", MANEUVERS)
def test_synthetic_labels_and_shapes(man):
    sc = generate_synthetic(SyntheticSpec(maneuver=man, seed=11))
    assert sc.maneuver == man
    assert sc.raw_observation.values.shape == (4, 9, 30)
    assert sc.observation.n_steps == 50 and sc.future.shape == (4, 9, 50)
    assert sc.is_continuous()
    lateral = sc.ground_truth[1, -1]
    if man == "lane-change-left":
        assert lateral > 1.0
    elif man == "lane-change-right":
        assert lateral < -1.0


def test_synthetic_deterministic():
    a = generate_synthetic(SyntheticSpec(seed=3, maneuver="lane-change-left"))
    b = generate_synthetic(SyntheticSpec(seed=3, maneuver="lane-change-left"))
    np.testing.assert_array_equal(a.raw_observation.values, b.raw_observation.values)
    np.testing.assert_array_equal(a.future, b.future)


def test_generate_dataset_balanced():
    data = generate_dataset(3, seed=1)
    assert [s.maneuver for s in data] == [m for m in MANEUVERS for _ in range(3)]


def test_scenario_file_round_trip(tmp_path, small_dataset):
    path = tmp_path / "sc.csv"
    paths = write_scenarios(path, small_dataset)
    assert paths[1].suffix == ".json"
    back = read_scenarios(path)
    assert [s.scenario_id for s in back] == [s.scenario_id for s in small_dataset]
    for a, b in zip(small_dataset, back):
        assert a.maneuver == b.maneuver
        np.testing.assert_array_equal(a.raw_observation.values, b.raw_observation.values)
        np.testing.assert_array_equal(a.future, b.future)
        np.testing.assert_array_equal(a.raw_observation.slot_mask, b.raw_observation.slot_mask)


def test_scenario_file_malformed(tmp_path, small_dataset):
    path = tmp_path / "sc.csv"
    write_scenarios(path, small_dataset[:1])
    lines = path.read_text().splitlines()
    lines[5] = lines[5].rsplit(",", 1)[0] + ",oops"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(ScenarioFormatError) as err:
        read_scenarios(path)
    assert err.value.line == 6
    assert "line 6" in str(err.value)


def test_scenario_file_missing_sidecar(tmp_path):
    (tmp_path / "x.csv").write_text("scenario_id,slot,t_index,x_m,y_m,vx_mps,vy_mps\n")
    with pytest.raises(ScenarioFormatError):
        read_scenarios(tmp_path / "x.csv")


def test_ingest_window_arithmetic(tmp_path):
    tracks, meta = write_fixture(tmp_path, scene={1: (3, 100.0, 30.0)})
    out = ingest_highway_csv(tracks, meta)
    assert len(out) == 1  # floor((8 - 3 - 5) * 25) + 1
    sc = out[0]
    assert sc.raw_observation.n_steps == 75 and sc.h_pred == 125
    assert sc.maneuver == "keep-lane"
    assert sc.observation.n_steps == 125


def test_ingest_longer_track_stride(tmp_path):
    tracks, meta = write_fixture(tmp_path, n_frames=260, scene={1: (3, 100.0, 30.0)})
    assert len(ingest_highway_csv(tracks, meta)) == (260 - 200) // 25 + 1


def test_ingest_empty_file(tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert ingest_highway_csv(empty) == []
    header_only = tmp_path / "h.csv"
    header_only.write_text("frame,id,x,y,xVelocity,yVelocity,laneId\n")
    assert ingest_highway_csv(header_only) == []


def test_ingest_missing_columns(tmp_path):
    bad = tmp_path / "b.csv"
    bad.write_text("frame,id,x\n1,1,0\n")
    with pytest.raises(ScenarioFormatError, match="missing required columns"):
        ingest_highway_csv(bad)


def test_ingest_malformed_row(tmp_path):
    tracks, meta = write_fixture(tmp_path, scene={1: (3, 100.0, 30.0)})
    lines = tracks.read_text().splitlines()
    lines[10] = lines[10].replace("30.0", "fast", 1)
    tracks.write_text("\n".join(lines) + "\n")
    with pytest.raises(ScenarioFormatError) as err:
        ingest_highway_csv(tracks, meta)
    assert err.value.line == 11


def _target_window(scenarios):
    return next(s for s in scenarios if s.scenario_id.startswith("1@"))


def test_ingest_geometry(tmp_path):
    tracks, meta = write_fixture(tmp_path)
    sc = _target_window(ingest_highway_csv(tracks, meta))
    obs = sc.raw_observation
    assert obs.slot_mask.tolist() == [True, True, True, True, True, False, False, False, True]
    assert obs.values[0, 1, -1] == pytest.approx(20.0)
    assert obs.values[1, 4, -1] == pytest.approx(3.5)  # left is +y
    assert obs.values[1, 8, -1] == pytest.approx(-3.5)
    np.testing.assert_allclose(obs.values[2, obs.slot_mask], 30.0)


def test_neighbor_id_cross_check(tmp_path):
    tracks, meta = write_fixture(tmp_path)
    geo = _target_window(ingest_highway_csv(tracks, meta))
    ids = _target_window(ingest_highway_csv(tracks, meta, IngestConfig(use_neighbor_ids=True)))
    np.testing.assert_array_equal(geo.raw_observation.slot_mask, ids.raw_observation.slot_mask)
    np.testing.assert_array_equal(geo.raw_observation.values, ids.raw_observation.values)
    np.testing.assert_array_equal(geo.future, ids.future)


def test_opposite_direction_is_mirrored(tmp_path):
    fwd = _target_window(ingest_highway_csv(*write_fixture(tmp_path)))
    back = _target_window(ingest_highway_csv(*write_fixture(tmp_path, mirrored=True, name="m")))
    np.testing.assert_array_equal(fwd.raw_observation.slot_mask, back.raw_observation.slot_mask)
    np.testing.assert_allclose(back.raw_observation.values, fwd.raw_observation.values, atol=1e-9)


def test_ingest_config_from_mapping():
    cfg = IngestConfig.from_mapping({"f_hz": "30", "col_x": "xc", "col_preceding": "prec",
                                     "use_neighbor_ids": "yes", "unknown": "1"})
    assert cfg.f_hz == 30.0 and cfg.col_x == "xc" and cfg.use_neighbor_ids
    assert cfg.neighbor_columns["preceding"] == "prec"
    assert cfg.h_obs == 90


def test_load_tracks_skips_gaps(tmp_path):
    path = tmp_path / "g.csv"
    path.write_text("frame,id,x,y,xVelocity,yVelocity,laneId\n1,1,0,0,1,0,2\n3,1,2,0,1,0,2\n")
    assert load_tracks(path) == {}
