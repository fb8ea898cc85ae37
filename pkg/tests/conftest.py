import csv

import numpy as np
import pytest

FT = 0.3048
HEADER = ["Vehicle_ID", "Frame_ID", "Local_X", "Local_Y", "Lane_ID"]


def write_merge_fixture(path, frames=80, seed=0):
    """One ramp vehicle (lane 7) and eight target-lane vehicles (lane 6), in feet at 10 Hz.

    Lateral centres: lane 6 spans 18.5-22.2 m, lane 7 spans 22.2-25.9 m.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(frames) / 10.0
    rows = []
    specs = [(1, 7, 100.0, 12.0)]
    offsets = [15.0, 35.0, 55.0, 75.0, -15.0, -35.0, -55.0, -75.0]
    for k, off in enumerate(offsets):
        specs.append((10 + k, 6, 100.0 + off, 11.0 + 0.25 * k))
    for vid, lane, x0, v in specs:
        y = 24.0 if lane == 7 else 20.3
        x = x0 + v * t + rng.normal(0, 0.05, frames)
        for f in range(frames):
            rows.append([vid, f + 1, y / FT, x[f] / FT, lane])
    rng.shuffle(rows)  # exercise the frame sort
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        w.writerows(rows)
    return path


@pytest.fixture
def merge_fixture(tmp_path):
    return write_merge_fixture(tmp_path / "tracks.csv")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
