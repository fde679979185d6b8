import csv

import numpy as np
import pytest

from sfdm.bench import BenchGrid, count_transforms, run_speedup_grid, time_forward
from sfdm.layers import build_model
from sfdm.mode_selection import lowpass_selector


@pytest.mark.parametrize("kind", ["dct2", "dft"])
def test_transform_counts(kind):
    sel = lowpass_selector(3, (8, 8), hermitian=kind == "dft")
    for d in (1, 2, 5):
        t1 = build_model("t1", kind, sel, d, 4, seed=0)
        fno = build_model("fno", kind, sel, d, 4, seed=0)
        assert count_transforms(t1) == (1, 1)
        assert count_transforms(t1, "kspace") == (1, 0)
        assert count_transforms(fno) == (d, d)
    with pytest.raises(ValueError):
        count_transforms(t1, "both")


def test_counting_leaves_model_transform_untouched():
    t1 = build_model("t1", "dct2", lowpass_selector(3, 16), 2, seed=0)
    before = t1.transform
    count_transforms(t1)
    assert t1.transform is before


def test_time_forward_shape_and_positive():
    calls = []
    out = time_forward(lambda: calls.append(1), 5, 2)
    assert out.shape == (5,) and np.all(out > 0)
    assert len(calls) > 7


def test_grid_validation():
    with pytest.raises(ValueError, match="5 repetitions"):
        BenchGrid(repetitions=3)
    with pytest.raises(ValueError):
        BenchGrid(depths=())
    with pytest.raises(ValueError):
        BenchGrid(ndim=3)


def test_small_grid_report(tmp_path):
    grid = BenchGrid(depths=(1, 4), widths=(4,), resolutions=(16,), repetitions=5, warmup=1, ndim=1)
    seen = []
    rep = run_speedup_grid(grid, progress=seen.append)
    assert len(rep.rows) == 4 and len(seen) == 2
    for r in rep.rows:
        assert r["median_us"] > 0 and r["iqr_us"] >= 0
    fno_row = [r for r in rep.rows if r["wiring"] == "fno"][0]
    assert fno_row["speedup"] == 1.0
    assert rep.speedup(1, 4, 16) > 0
    with pytest.raises(KeyError):
        rep.speedup(2, 4, 16)
    path = tmp_path / "bench.csv"
    rep.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert len(rows) == 4 and list(rows[0]) == list(rep.COLUMNS)
