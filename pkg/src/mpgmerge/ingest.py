"""NGSIM-style trajectory ingestion and replay-scenario construction.

Pipeline: parse a delimited file into per-vehicle tracks sorted by frame,
smooth positions with a Savitzky-Golay filter (tracks shorter than the
window are dropped), recompute speeds by differentiating the smoothed
positions, reassign lanes from lateral position, and finally cut replay
scenarios around every recorded on-ramp vehicle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.signal import savgol_filter

from mpgmerge.config import IngestConfig
from mpgmerge.rewards import RAMP, TARGET
from mpgmerge.sim import TARGET_Y, ScenarioBatch

FEET = 0.3048
OFF_ROAD = -1
GHOST_OFFSET = 5000.0  # padding vehicles sit this far away and never interact


class IngestFormatError(ValueError):
    """The input file cannot be interpreted with the configured column map."""


class TooShortError(ValueError):
    """Series shorter than the smoothing window; the caller should drop the track."""


@dataclass
class RawTrack:
    vehicle_id: int
    frames: np.ndarray
    x: np.ndarray
    y: np.ndarray
    t: np.ndarray
    frame_rate: float
    lane: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.frames)


@dataclass
class ParsedFile:
    tracks: list
    skipped_rows: int
    skipped_detail: list = field(default_factory=list)


@dataclass
class SmoothTrack:
    vehicle_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    lane: np.ndarray

    def to_dict(self) -> dict:
        return {"vehicle_id": self.vehicle_id, "t": self.t.tolist(), "x": self.x.tolist(),
                "y": self.y.tolist(), "v": self.v.tolist(), "lane": self.lane.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothTrack":
        return cls(int(d["vehicle_id"]), np.asarray(d["t"], float), np.asarray(d["x"], float),
                   np.asarray(d["y"], float), np.asarray(d["v"], float), np.asarray(d["lane"], np.int64))


def parse_trajectory_file(path, cfg: IngestConfig = IngestConfig()) -> ParsedFile:
    """Group rows by vehicle and sort each group by frame.

    Rows with a missing or non-numeric mandatory field, or a frame already
    seen for that vehicle, are skipped and counted.
    """
    cmap = cfg.column_map
    required = ("vehicle_id", "frame", "x", "y")
    scale = FEET if cfg.feet_to_meters else 1.0
    groups: dict = {}
    skipped, detail = 0, []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter=cfg.delimiter)
        header = reader.fieldnames or []
        missing = [cmap.get(k, k) for k in required if cmap.get(k, k) not in header]
        if missing:
            raise IngestFormatError(f"{path}: missing mandatory columns {missing}")
        lane_col = cmap.get("lane")
        has_lane = lane_col in header
        for lineno, row in enumerate(reader, start=2):
            try:
                vid = int(float(row[cmap["vehicle_id"]]))
                frame = int(float(row[cmap["frame"]]))
                x = float(row[cmap["x"]]) * scale
                y = float(row[cmap["y"]]) * scale
                lane = int(float(row[lane_col])) if has_lane and row[lane_col] not in (None, "") else OFF_ROAD
                if not (np.isfinite(x) and np.isfinite(y)):
                    raise ValueError("non-finite position")
            except (TypeError, ValueError, KeyError) as exc:
                skipped += 1
                detail.append({"line": lineno, "reason": str(exc)})
                continue
            groups.setdefault(vid, []).append((frame, x, y, lane, lineno))
    tracks = []
    for vid in sorted(groups):
        rows = sorted(groups[vid], key=lambda r: r[0])
        kept, seen = [], set()
        for r in rows:
            if r[0] in seen:
                skipped += 1
                detail.append({"line": r[4], "reason": "duplicate frame"})
                continue
            seen.add(r[0])
            kept.append(r)
        arr = np.array([r[:4] for r in kept], dtype=float)
        frames = arr[:, 0].astype(np.int64)
        tracks.append(RawTrack(vid, frames, arr[:, 1], arr[:, 2], frames / cfg.frame_rate,
                               cfg.frame_rate, arr[:, 3].astype(np.int64)))
    return ParsedFile(tracks, skipped, detail)


def savitzky_golay(series, window: int, order: int) -> np.ndarray:
    """Local least-squares polynomial smoothing; edges use a fit on the first/last window."""
    series = np.asarray(series, dtype=float)
    if window % 2 != 1 or window < 1:
        raise ValueError("window must be a positive odd integer")
    if order >= window:
        raise ValueError("order must be less than window")
    if series.size < window:
        raise TooShortError(f"series of length {series.size} is shorter than window {window}")
    return savgol_filter(series, window, order, mode="interp")


def differentiate(positions, dt: float) -> np.ndarray:
    """Central differences inside, one-sided differences at the two ends."""
    positions = np.asarray(positions, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if positions.size < 2:
        raise ValueError("need at least two samples")
    return np.gradient(positions, dt)


def reassign_lanes(y, boundaries) -> np.ndarray:
    """Lane ``k`` (1-based) for ``boundaries[k-1] <= y <= boundaries[k]``.

    A point exactly on an interior boundary belongs to the lower-index lane;
    anything outside the outermost boundaries is ``OFF_ROAD``.
    """
    b = np.asarray(boundaries, dtype=float)
    if b.ndim != 1 or b.size < 2 or np.any(np.diff(b) <= 0):
        raise ValueError("lane boundaries must be strictly increasing")
    y = np.asarray(y, dtype=float)
    idx = np.maximum(np.searchsorted(b, y, side="left"), 1)
    return np.where((y < b[0]) | (y > b[-1]), OFF_ROAD, idx).astype(np.int64)


def process_tracks(tracks, cfg: IngestConfig = IngestConfig()):
    """Smooth, differentiate and relabel every track.

    Returns ``(smoothed, excluded_ids)``; excluded tracks are exactly those
    shorter than the smoothing window.
    """
    out, excluded = [], []
    for tr in tracks:
        try:
            xs = savitzky_golay(tr.x, cfg.window, cfg.order)
            ys = savitzky_golay(tr.y, cfg.window, cfg.order)
        except TooShortError:
            excluded.append(tr.vehicle_id)
            continue
        v = differentiate(xs, 1.0 / tr.frame_rate)
        out.append(SmoothTrack(tr.vehicle_id, tr.t.copy(), xs, ys, v, reassign_lanes(ys, cfg.lane_boundaries)))
    return out, excluded


@dataclass
class ReplayScenario:
    scenario_id: int
    vehicle_ids: list
    x0: np.ndarray
    v0: np.ndarray
    lane0: np.ndarray
    replay_x: np.ndarray   # (steps + 1, N)
    replay_v: np.ndarray
    human_x: np.ndarray    # recorded motion of the merging vehicle itself
    human_v: np.ndarray
    n_real: int

    def to_dict(self) -> dict:
        return {"scenario_id": self.scenario_id, "vehicle_ids": self.vehicle_ids, "n_real": self.n_real,
                "x0": self.x0.tolist(), "v0": self.v0.tolist(), "lane0": self.lane0.tolist(),
                "replay_x": self.replay_x.tolist(), "replay_v": self.replay_v.tolist(),
                "human_x": self.human_x.tolist(), "human_v": self.human_v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ReplayScenario":
        a = lambda k: np.asarray(d[k], dtype=float)
        return cls(int(d["scenario_id"]), list(d["vehicle_ids"]), a("x0"), a("v0"),
                   np.asarray(d["lane0"], np.int64), a("replay_x"), a("replay_v"),
                   a("human_x"), a("human_v"), int(d["n_real"]))


def _sample(track: SmoothTrack, times: np.ndarray):
    """Positions/speeds at ``times``; constant-speed extrapolation past the record."""
    x = np.interp(times, track.t, track.x)
    v = np.interp(times, track.t, track.v)
    after = times > track.t[-1]
    x = np.where(after, track.x[-1] + track.v[-1] * (times - track.t[-1]), x)
    before = times < track.t[0]
    x = np.where(before, track.x[0] - track.v[0] * (track.t[0] - times), x)
    return x, np.clip(v, 0.0, 30.0)


def _lane_at(track: SmoothTrack, t0: float) -> Optional[int]:
    if t0 < track.t[0] or t0 > track.t[-1]:
        return None
    k = int(np.argmin(np.abs(track.t - t0)))
    half_frame = 0.5 * float(np.median(np.diff(track.t))) if track.t.size > 1 else 0.0
    if abs(track.t[k] - t0) > half_frame + 1e-9:
        return None
    return int(track.lane[k])


def build_replay_scenarios(tracks, cfg: IngestConfig, n_leaders: int = 4, n_followers: int = 4,
                           dt: float = 0.1):
    """One scenario per recorded on-ramp vehicle.

    The ego starts at that vehicle's first processed sample; the players are
    the ``n_leaders`` nearest target-lane vehicles ahead and ``n_followers``
    nearest behind at that instant, replayed open-loop.  Missing players are
    padded with distant ghost vehicles so the network input size is fixed.
    Returns ``(scenarios, skipped)`` with ``skipped`` a list of
    ``{"vehicle_id", "reason"}``.
    """
    steps = int(round(cfg.horizon / dt))
    scenarios, skipped = [], []
    for ego in sorted(tracks, key=lambda tr: tr.vehicle_id):
        if int(ego.lane[0]) not in cfg.ramp_lanes:
            continue
        t0 = float(ego.t[0])
        times = t0 + dt * np.arange(steps + 1)
        x_e, v_e = float(ego.x[0]), float(np.clip(ego.v[0], 0.0, 30.0))
        ahead, behind = [], []
        for tr in tracks:
            if tr.vehicle_id == ego.vehicle_id or _lane_at(tr, t0) != cfg.target_lane:
                continue
            xi = float(np.interp(t0, tr.t, tr.x))
            (ahead if xi > x_e else behind).append((abs(xi - x_e), tr.vehicle_id, tr))
        if not ahead and not behind:
            skipped.append({"vehicle_id": ego.vehicle_id, "reason": "no target-lane vehicle at start"})
            continue
        ahead = sorted(ahead, key=lambda r: (r[0], r[1]))[:n_leaders]
        behind = sorted(behind, key=lambda r: (r[0], r[1]))[:n_followers]
        cols_x, cols_v, ids = [], [], [ego.vehicle_id]
        for group, sign, want in ((ahead, 1.0, n_leaders), (behind, -1.0, n_followers)):
            for _, vid, tr in group:
                xs, vs = _sample(tr, times)
                cols_x.append(xs)
                cols_v.append(vs)
                ids.append(vid)
            for k in range(want - len(group)):
                cols_x.append(x_e + sign * (GHOST_OFFSET + 100.0 * k) + v_e * (times - t0))
                cols_v.append(np.full(times.size, v_e))
                ids.append(None)
        rx = np.column_stack([np.full(times.size, x_e)] + cols_x)
        rv = np.column_stack([np.full(times.size, v_e)] + cols_v)
        hx, hv = _sample(ego, times)
        lane0 = np.array([RAMP] + [TARGET] * (len(ids) - 1), dtype=np.int64)
        scenarios.append(ReplayScenario(ego.vehicle_id, ids, rx[0].copy(), rv[0].copy(), lane0, rx, rv,
                                        hx, hv, 1 + len(ahead) + len(behind)))
    return scenarios, skipped


def scenarios_to_batch(scenarios, lane_width: float = 3.6) -> ScenarioBatch:
    if not scenarios:
        raise ValueError("no replay scenarios")
    x = np.stack([s.x0 for s in scenarios])
    lane = np.stack([s.lane0 for s in scenarios])
    y = np.where(lane == RAMP, TARGET_Y - lane_width, TARGET_Y)
    return ScenarioBatch(x, np.stack([s.v0 for s in scenarios]), y, lane,
                         np.array([s.scenario_id for s in scenarios]),
                         np.stack([s.replay_x for s in scenarios]), np.stack([s.replay_v for s in scenarios]))


def save_processed(tracks, path) -> None:
    """JSON-lines, one smoothed track per line."""
    with open(path, "w") as fh:
        for tr in tracks:
            fh.write(json.dumps(tr.to_dict(), sort_keys=True) + "\n")


def load_processed(path) -> list:
    return [SmoothTrack.from_dict(json.loads(line)) for line in Path(path).read_text().splitlines() if line]


def save_scenarios(scenarios, path, skipped=()) -> None:
    doc = {"format": "mpgmerge.replay-scenarios", "version": 1,
           "scenarios": [s.to_dict() for s in scenarios], "skipped": list(skipped)}
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_scenarios(path) -> list:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "mpgmerge.replay-scenarios":
        raise IngestFormatError(f"{path} is not a replay-scenario manifest")
    return [ReplayScenario.from_dict(d) for d in doc["scenarios"]]
