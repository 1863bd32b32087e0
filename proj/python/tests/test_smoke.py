# SPDX-License-Identifier: Apache-2.0
import math
import pathlib
import subprocess

import numpy as np
import pytest

import rpn

ROOT = pathlib.Path(__file__).resolve().parents[2]
DESK = ROOT / "scenes" / "desk.json"


def test_sh_constant_term():
    y = rpn.sh_eval([0.3, -0.2, 0.9], 3)
    assert len(y) == 16
    assert y[0] == pytest.approx(0.5 / math.sqrt(math.pi))


def test_metrics_pairing():
    m = rpn.compute_metrics([1.0, 1.0], [1.0 - math.sqrt(3e-4), 1.0 + math.sqrt(3e-4)])
    assert m["mse"] == pytest.approx(3e-4)
    assert abs(m["psnr"] - 35.23) < 0.05
    assert math.isinf(rpn.compute_metrics([0.5], [0.5])["psnr"])


def test_friis_and_knife_edge():
    lam = 299792458.0 / 2.14e9
    want = 20 * math.log10(lam / (4 * math.pi * 100.0))
    assert rpn.friis_gain_db(100.0, 2.14e9) == pytest.approx(want, abs=1e-9)
    assert abs(rpn.knife_edge_loss(0.0) - 6.02) < 0.1


def test_oracle_map_shape_and_range():
    grid = rpn.oracle_map(str(DESK), [-20.0, 15.0, 10.0], pattern_id=1, resolution=16)
    assert grid.shape == (16, 16)
    assert grid.dtype == np.float32
    assert np.all((grid >= 0) & (grid <= 1))
    # Center cells fall inside the box.
    assert grid[8, 8] == 0.0


def test_errors_map_to_python():
    with pytest.raises(ValueError):
        rpn.oracle_map(str(DESK), [0.0, 0.0, 10.0], pattern_id=9)
    with pytest.raises(OSError):
        rpn.Checkpoint("/nonexistent/model.rpnc")


def test_gradcheck_micro():
    r = rpn.gradcheck_micro(seed=1)
    assert r["passed"]
    assert r["max_rel_error"] < 1e-4


def _cli():
    for p in sorted(ROOT.glob("build/**/tools/rpn")):
        if p.is_file():
            return p
    return None


@pytest.mark.skipif(_cli() is None, reason="rpn CLI not built")
def test_checkpoint_predictions(tmp_path):
    cli = str(_cli())
    data = tmp_path / "d.rpnd"
    model = tmp_path / "m.rpnc"
    subprocess.run([cli, "dataset", "--scene", str(DESK), "--out", str(data), "--tx-count", "6",
                    "--rx-grid", "6x6", "--seed", "1"], check=True, capture_output=True)
    subprocess.run([cli, "train", "--data", str(data), "--out", str(model), "--epochs", "1", "--n", "3",
                    "--k", "3", "--probe-spacing", "10"], check=True, capture_output=True)
    header, records = rpn.read_dataset(str(data))
    assert records.shape == (6 * 2 * 36, 8)
    assert header["n_tx"] == 6
    ck = rpn.Checkpoint(str(model))
    assert ck.scene_hash == rpn.scene_hash(str(DESK))
    grid = ck.predict_map([-20.0, 15.0, 10.0], 1, 1.5, 16)
    assert grid.shape == (16, 16)
    assert np.all((grid > 0) & (grid < 1))
    lo, hi = ck.bounds
    # First cell center of the 16 x 16 map.
    pts = [[lo[0] + (hi[0] - lo[0]) / 32, lo[1] + (hi[1] - lo[1]) / 32, 1.5]]
    p = ck.predict_points([-20.0, 15.0, 10.0], 1, pts)
    assert p[0] == pytest.approx(float(grid[0, 0]), abs=1e-6)
    with pytest.raises(ValueError):
        ck.predict_map([-20.0, 15.0, 10.0], 7)
