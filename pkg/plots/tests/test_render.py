import csv
import json
import math
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import render


def make_snapshot(path, t=0.0, n=4, with_cells=True, with_weights=False, seed=0):
    """Handwritten snapshot in the solver's JSON format: a 2x2 block of unit
    cells, one with a circular-arc edge."""
    rng = np.random.default_rng(seed)
    pos = (np.indices((2, 2)).reshape(2, -1).T + 0.5 + 0.05 * rng.random((4, 2))).tolist()
    doc = {
        "t": t,
        "mode": "crowd",
        "eps": 0.1,
        "positions": pos,
        "psi": rng.random(4).tolist(),
        "energy": 1.25,
        "speeds": rng.random(4).tolist(),
        "barycenters": (np.asarray(pos) + 0.02).tolist(),
    }
    if with_cells:
        cells = []
        for k, (i, j) in enumerate([(0, 0), (1, 0), (0, 1), (1, 1)]):
            if k == 0:
                loop = [
                    {"type": "seg", "p": [i, j], "q": [i + 1, j], "tag": -1},
                    {"type": "seg", "p": [i + 1, j], "q": [i + 1, j + 1], "tag": 1},
                    {
                        "type": "arc",
                        "center": [i + 0.5, j + 0.5],
                        "radius": math.sqrt(0.5),
                        "a0": 0.25 * math.pi,
                        "a1": 0.75 * math.pi,
                    },
                    {"type": "seg", "p": [i, j + 1], "q": [i, j], "tag": 2},
                ]
            else:
                loop = [
                    {"type": "seg", "p": [i, j], "q": [i + 1, j], "tag": -1},
                    {"type": "seg", "p": [i + 1, j], "q": [i + 1, j + 1], "tag": -1},
                    {"type": "seg", "p": [i + 1, j + 1], "q": [i, j + 1], "tag": -1},
                    {"type": "seg", "p": [i, j + 1], "q": [i, j], "tag": -1},
                ]
            cells.append({"owner": k, "loops": [loop]})
        doc["cells"] = cells
    if with_weights:
        doc["weights"] = [0.2, 0.4, 1.6, 0.8]
    with open(path, "w") as f:
        json.dump(doc, f)
    return path


def write_spec(path, **spec):
    with open(path, "w") as f:
        json.dump(spec, f)
    return str(path)


class TestRenderKinds:
    def test_cells_single_panel(self, tmp_path):
        snap = make_snapshot(tmp_path / "s0.json")
        out = tmp_path / "cells.png"
        spec = write_spec(tmp_path / "spec.json", kind="cells", inputs=[str(snap)], output=str(out))
        assert render.main(["--spec", spec]) == 0
        assert out.exists() and out.stat().st_size > 1000

    def test_cells_six_panels(self, tmp_path):
        inputs = [str(make_snapshot(tmp_path / f"s{k}.json", t=0.1 * k, seed=k)) for k in range(6)]
        out = tmp_path / "six.png"
        spec = write_spec(
            tmp_path / "spec.json", kind="cells", inputs=inputs, output=str(out), color_key="initial-y"
        )
        assert render.main(["--spec", spec]) == 0
        assert out.exists()

    def test_density_per_frame_max_normalization(self, tmp_path):
        snap = make_snapshot(tmp_path / "s.json", with_weights=True)
        doc = json.load(open(snap))
        colors, is_rgb = render.color_values(doc, doc, "gaussian-weight")
        assert not is_rgb
        assert colors.max() == pytest.approx(1.0)  # current maximum -> top color
        out = tmp_path / "dens.png"
        spec = write_spec(tmp_path / "spec.json", kind="density", inputs=[str(snap)], output=str(out))
        assert render.main(["--spec", spec]) == 0
        assert out.exists()

    def test_arrows_from_projection(self, tmp_path):
        snap = make_snapshot(tmp_path / "proj.json")
        out = tmp_path / "arrows.png"
        spec = write_spec(tmp_path / "spec.json", kind="arrows", inputs=[str(snap)], output=str(out))
        assert render.main(["--spec", spec]) == 0
        assert out.exists()

    def test_trajectories_csv(self, tmp_path):
        path = tmp_path / "trajectories.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["t", "particle", "x", "y"])
            for k in range(5):
                for i in range(3):
                    w.writerow([0.1 * k, i, 0.1 * k + i, 0.05 * k * i])
        out = tmp_path / "traj.png"
        spec = write_spec(tmp_path / "spec.json", kind="trajectories", inputs=[str(path)], output=str(out))
        assert render.main(["--spec", spec]) == 0
        assert out.exists()

    def test_timeout_with_sentinels(self, tmp_path):
        path = tmp_path / "timeout.csv"
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["particle", "x0", "y0", "timeout"])
            w.writerow([0, 0.1, 0.1, 0.5])
            w.writerow([1, 0.2, 0.3, -1.0])
            w.writerow([2, 0.5, 0.1, 1.25])
        out = tmp_path / "timeout.png"
        spec = write_spec(tmp_path / "spec.json", kind="timeout", inputs=[str(path)], output=str(out))
        assert render.main(["--spec", spec]) == 0
        assert out.exists()


class TestRobustness:
    def test_missing_input_exit_2(self, tmp_path):
        spec = write_spec(
            tmp_path / "spec.json", kind="cells", inputs=[str(tmp_path / "nope.json")], output="x.png"
        )
        assert render.main(["--spec", spec]) == 2

    def test_schema_mismatch_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"foo": 1}))
        out = tmp_path / "x.png"
        spec = write_spec(tmp_path / "spec.json", kind="cells", inputs=[str(bad)], output=str(out))
        assert render.main(["--spec", spec]) == 2

    def test_inputs_not_mutated_and_bytes_stable(self, tmp_path):
        snap = make_snapshot(tmp_path / "s.json")
        before = open(snap, "rb").read()
        out1 = tmp_path / "a.png"
        out2 = tmp_path / "b.png"
        spec1 = write_spec(tmp_path / "spec1.json", kind="cells", inputs=[str(snap)], output=str(out1))
        spec2 = write_spec(tmp_path / "spec2.json", kind="cells", inputs=[str(snap)], output=str(out2))
        assert render.main(["--spec", spec1]) == 0
        assert render.main(["--spec", spec2]) == 0
        assert open(snap, "rb").read() == before
        assert open(out1, "rb").read() == open(out2, "rb").read()

    def test_arc_sampling_at_least_64_segments(self, tmp_path):
        snap = make_snapshot(tmp_path / "s.json")
        doc = json.load(open(snap))
        arc_cell = doc["cells"][0]
        polys = render.cell_polygon(arc_cell)
        assert len(polys[0]) >= 64
