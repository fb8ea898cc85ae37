import numpy as np
import pytest

from mpgmerge.config import IngestConfig, desk_config
from mpgmerge.ingest import (OFF_ROAD, IngestFormatError, RawTrack, TooShortError, build_replay_scenarios,
                             differentiate, load_processed, load_scenarios, parse_trajectory_file,
                             process_tracks, reassign_lanes, save_processed, save_scenarios,
                             savitzky_golay, scenarios_to_batch)
from mpgmerge.policy import PolicyParams
from mpgmerge.sim import parse_kinds, simulate

METRIC = IngestConfig(feet_to_meters=False)


def write(path, text):
    path.write_text(text)
    return path


# -- parsing ------------------------------------------------------------------------------

def test_parse_two_rows(tmp_path):
    p = write(tmp_path / "a.csv", "Vehicle_ID,Frame_ID,Local_X,Local_Y\n7,1,2.0,10.0\n7,2,2.0,11.0\n")
    out = parse_trajectory_file(p, METRIC)
    assert len(out.tracks) == 1 and len(out.tracks[0]) == 2 and out.skipped_rows == 0
    assert out.tracks[0].x.tolist() == [10.0, 11.0] and out.tracks[0].t.tolist() == [0.1, 0.2]


def test_parse_sorts_and_counts_bad_rows(tmp_path):
    text = ("Vehicle_ID,Frame_ID,Local_X,Local_Y\n"
            "7,3,2.0,13.0\n7,1,2.0,11.0\n7,2,abc,12.0\n7,2,2.0,12.0\n8,1,5.0,0.0\n")
    out = parse_trajectory_file(write(tmp_path / "b.csv", text), METRIC)
    assert out.skipped_rows == 1 and out.skipped_detail[0]["line"] == 4
    t7 = out.tracks[0]
    assert t7.frames.tolist() == [1, 2, 3] and t7.x.tolist() == [11.0, 12.0, 13.0]
    assert [t.vehicle_id for t in out.tracks] == [7, 8]


def test_parse_duplicate_frame_and_feet(tmp_path):
    text = "Vehicle_ID,Frame_ID,Local_X,Local_Y\n1,1,0,10\n1,1,0,20\n1,2,0,30\n"
    out = parse_trajectory_file(write(tmp_path / "c.csv", text))
    assert out.skipped_rows == 1
    assert out.tracks[0].x.tolist() == pytest.approx([3.048, 9.144])


def test_parse_missing_column(tmp_path):
    with pytest.raises(IngestFormatError):
        parse_trajectory_file(write(tmp_path / "d.csv", "Vehicle_ID,Frame_ID,Local_X\n1,1,0\n"), METRIC)


# -- Savitzky-Golay --------------------------------------------------------------------------

def sg_midpoint_weights(window, order):
    """Least-squares oracle: value of the local polynomial fit at the window centre."""
    k = np.arange(window) - window // 2
    V = np.vander(k, order + 1, increasing=True)
    return np.linalg.pinv(V)[0]


def test_sg_stencil():
    w = sg_midpoint_weights(5, 2)
    np.testing.assert_allclose(w, np.array([-3, 12, 17, 12, -3]) / 35.0, atol=1e-12)
    impulse = np.zeros(11)
    impulse[5] = 1.0
    out = savitzky_golay(impulse, 5, 2)
    np.testing.assert_allclose(out[3:8], w[::-1], atol=1e-12)


def test_sg_polynomial_reproduction():
    np.testing.assert_allclose(savitzky_golay(np.full(30, 4.2), 21, 3), 4.2, atol=1e-12)
    t = np.linspace(-3, 5, 60)
    q = 0.7 * t ** 2 - 2.0 * t + 1.5
    out = savitzky_golay(q, 21, 3)
    assert out.shape == q.shape
    assert np.max(np.abs(out - q)) < 1e-10
    assert np.max(np.abs(savitzky_golay(q, 5, 2) - q)) < 1e-10


def test_sg_errors():
    with pytest.raises(ValueError):
        savitzky_golay(np.zeros(10), 4, 2)
    with pytest.raises(ValueError):
        savitzky_golay(np.zeros(10), 5, 5)
    with pytest.raises(TooShortError):
        savitzky_golay(np.zeros(4), 5, 2)


def test_smoothing_reduces_speed_roughness():
    rng = np.random.default_rng(0)
    dt = 0.1
    t = np.arange(300) * dt
    x = 12.0 * t + 0.5 * np.sin(0.3 * t) + rng.normal(0, 0.3, t.size)
    raw_v = differentiate(x, dt)
    smooth_v = differentiate(savitzky_golay(x, 21, 3), dt)
    rough = lambda v: np.mean(np.diff(v, 2) ** 2)
    assert rough(smooth_v) < 0.5 * rough(raw_v)


# -- differentiation -------------------------------------------------------------------------

def test_differentiate():
    t = np.arange(20) * 0.1
    np.testing.assert_allclose(differentiate(3.0 * t + 1.0, 0.1), 3.0, atol=1e-12)
    assert not np.any(differentiate(np.full(5, 2.0), 0.1))
    v = differentiate(t ** 2, 0.1)
    np.testing.assert_allclose(v[1:-1], 2 * t[1:-1], atol=1e-12)  # central differences exact on quadratics
    assert abs(v[0] - 0.0) <= 0.1 + 1e-12  # one-sided: error dt
    with pytest.raises(ValueError):
        differentiate([1.0], 0.1)
    with pytest.raises(ValueError):
        differentiate([1.0, 2.0], 0.0)


# -- lanes -----------------------------------------------------------------------------------------

def test_reassign_lanes():
    b = (0.0, 3.0, 6.0, 9.0)
    assert reassign_lanes([3.0, 6.0], b).tolist() == [1, 2]  # boundaries go to the lower index
    assert reassign_lanes([0.0, 9.0], b).tolist() == [1, 3]
    assert reassign_lanes([-0.1, 9.5], b).tolist() == [OFF_ROAD, OFF_ROAD]
    y = np.linspace(1.0, 5.0, 50)
    lanes = reassign_lanes(y, b)
    assert np.count_nonzero(np.diff(lanes)) == 1 and lanes[0] == 1 and lanes[-1] == 2
    with pytest.raises(ValueError):
        reassign_lanes([1.0], (0.0, 0.0, 1.0))


def test_short_tracks_excluded_exactly():
    tracks = [RawTrack(n, np.arange(n), np.arange(n) * 1.0, np.full(n, 20.0), np.arange(n) / 10.0, 10.0)
              for n in (19, 20, 21, 22, 40)]
    out, excluded = process_tracks(tracks, IngestConfig())
    assert excluded == [19, 20]
    assert [t.vehicle_id for t in out] == [21, 22, 40]
    assert all(len(t.x) == len(t.v) == len(t.lane) == t.vehicle_id for t in out)


# -- replay scenarios -------------------------------------------------------------------------------

def processed(path):
    return process_tracks(parse_trajectory_file(path).tracks)[0]


def test_replay_scenario_construction(merge_fixture):
    tracks = processed(merge_fixture)
    scenarios, skipped = build_replay_scenarios(tracks, IngestConfig())
    assert len(scenarios) == 1 and not skipped
    s = scenarios[0]
    assert s.n_real == 9 and len(s.vehicle_ids) == 9 and None not in s.vehicle_ids
    ego = next(t for t in tracks if t.vehicle_id == 1)
    assert s.x0[0] == ego.x[0] and s.v0[0] == pytest.approx(ego.v[0])
    assert s.lane0.tolist() == [0] + [1] * 8
    assert np.all(s.x0[1:5] > s.x0[0]) and np.all(s.x0[5:] < s.x0[0])
    again, _ = build_replay_scenarios(tracks, IngestConfig())
    assert again[0].to_dict() == s.to_dict()


def test_replay_is_open_loop(merge_fixture):
    scenarios, _ = build_replay_scenarios(processed(merge_fixture), IngestConfig())
    batch = scenarios_to_batch(scenarios)
    cfg = desk_config()
    cfg.scenario.n_leaders = cfg.scenario.n_followers = 4
    kinds = parse_kinds("net", "replay", 9)
    slow, fast = PolicyParams.zeros(9, cfg.network), PolicyParams.zeros(9, cfg.network)
    slow.b3[0], fast.b3[0] = -0.5, 0.5
    steps = 20
    a = simulate(batch, slow, cfg, kinds, record=True, steps=steps)
    b = simulate(batch, fast, cfg, kinds, record=True, steps=steps)
    n = min(int(a.length[0]), int(b.length[0])) + 1
    assert n > 1
    np.testing.assert_array_equal(a.records["x"][0, :n, 1:], b.records["x"][0, :n, 1:])
    np.testing.assert_allclose(a.records["x"][0, :n, 1:], scenarios[0].replay_x[:n, 1:], atol=1e-9)
    assert not np.allclose(a.records["x"][0, :n, 0], b.records["x"][0, :n, 0])


def test_ramp_vehicle_alone_is_skipped(merge_fixture):
    tracks = [t for t in processed(merge_fixture) if t.vehicle_id == 1]
    scenarios, skipped = build_replay_scenarios(tracks, IngestConfig())
    assert scenarios == [] and skipped[0]["vehicle_id"] == 1


def test_padding_and_roundtrips(merge_fixture, tmp_path):
    tracks = processed(merge_fixture)
    few = [t for t in tracks if t.vehicle_id in (1, 10, 14)]
    scenarios, _ = build_replay_scenarios(few, IngestConfig())
    s = scenarios[0]
    assert s.n_real == 3 and s.vehicle_ids.count(None) == 6 and s.x0.size == 9
    save_processed(tracks, tmp_path / "p.jsonl")
    back = load_processed(tmp_path / "p.jsonl")
    assert [t.to_dict() for t in back] == [t.to_dict() for t in tracks]
    save_scenarios(scenarios, tmp_path / "s.json")
    assert [x.to_dict() for x in load_scenarios(tmp_path / "s.json")] == [s.to_dict()]
    with pytest.raises(IngestFormatError):
        load_scenarios(write(tmp_path / "bad.json", "{}"))
