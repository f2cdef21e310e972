import csv
import io
import json

import numpy as np
import pytest
import scipy.linalg

from biharmonic_mg.assembly import assemble_rhs
from biharmonic_mg.cli import (CSV_COLUMNS, ExperimentConfig, main, memory_estimate, run_table,
                               solve_once)
from biharmonic_mg.multigrid import build_hierarchy, solve


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def samples(rows, d=2):
    pts = np.array([[float(r[f"xhat{k}"]) for k in range(d)] for r in rows if r["kind"] == "sample"])
    vals = np.array([float(r["value"]) for r in rows if r["kind"] == "sample"])
    return pts, vals


def test_table_csv(tmp_path):
    out = tmp_path / "t.csv"
    rc = main(["table", "--p-min", "3", "--p-max", "4", "--level-min", "3", "--level-max", "4",
               "--out", str(out)])
    assert rc == 0
    rows = read_csv(out)
    assert list(rows[0]) == CSV_COLUMNS
    assert len(rows) == 4
    assert all(r["converged"] == "True" and int(r["iterations"]) > 0 for r in rows)


def test_table_markdown(tmp_path):
    out = tmp_path / "t.md"
    rc = main(["table", "--smoother", "mass", "--p-min", "3", "--p-max", "5", "--level-min", "3",
               "--level-max", "4", "--format", "md", "--out", str(out)])
    assert rc == 0
    text = out.read_text()
    assert "| l \\ p | 3 | 4 | 5 |" in text
    assert text.count("\n| 3 |") == 1 and text.count("\n| 4 |") == 1


def test_table_deterministic():
    cfg = ExperimentConfig(p_range=(3, 4), level_range=(3, 3), smoother="mass")
    a, b = run_table(cfg), run_table(cfg)
    assert [c.iterations for c in a.cells.values()] == [c.iterations for c in b.cells.values()]


def test_memory_skip():
    cfg = ExperimentConfig(p_range=(3, 3), level_range=(4, 4), max_memory_gb=1e-9)
    res = run_table(cfg)
    cell = res.cells[(4, 3)]
    assert cell.status == "skipped: memory"
    assert "skipped: memory" in res.to_csv()
    assert memory_estimate(2, 3, 4) > 0


def test_table_preset_and_env(tmp_path, monkeypatch):
    monkeypatch.setenv("BIHARMONIC_MG_SMOOTHER", "mass")
    out = tmp_path / "t.csv"
    rc = main(["table", "--table", "para3d", "--p-min", "3", "--p-max", "3", "--level-min", "2",
               "--level-max", "2", "--out", str(out)])
    assert rc == 0
    row = read_csv(out)[0]
    assert row["smoother"] == "mass" and row["d"] == "3" and row["geometry"] == "unit-cube"


def test_explicit_flag_beats_env(tmp_path, monkeypatch):
    monkeypatch.setenv("BIHARMONIC_MG_SMOOTHER", "mass")
    out = tmp_path / "t.csv"
    main(["table", "--smoother", "gs", "--p-min", "3", "--p-max", "3", "--level-min", "3",
          "--level-max", "3", "--out", str(out)])
    assert read_csv(out)[0]["smoother"] == "gs"


def test_bad_config_reported(capsys):
    assert main(["table", "--sigma", "-1", "--p-min", "3", "--p-max", "3"]) == 2
    assert "sigma" in capsys.readouterr().err
    with pytest.raises(ValueError):
        ExperimentConfig(p_range=(5, 3))


def test_verify_green_and_json(tmp_path):
    out = tmp_path / "r.jsonl"
    assert main(["verify", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) > 20
    assert all(json.loads(line)["passed"] for line in lines)


def test_verify_negative_control(tmp_path):
    out = tmp_path / "r.jsonl"
    assert main(["verify", "--inverse-bound", "50", "--out", str(out)]) == 1
    objs = [json.loads(line) for line in out.read_text().splitlines()]
    assert any(not o["passed"] and o["statement"] == "inverse-inequality" for o in objs)


def test_solve_export_center_positive_and_symmetric(tmp_path):
    out = tmp_path / "s.csv"
    assert main(["solve", "--p", "3", "--level", "5", "--samples", "21", "--out", str(out)]) == 0
    rows = read_csv(out)
    pts, vals = samples(rows)
    centre = np.argmin(np.abs(pts - 0.5).sum(axis=1))
    assert np.allclose(pts[centre], 0.5)
    assert vals[centre] > 0
    V = vals.reshape(21, 21)
    assert np.abs(V - V.T).max() < 1e-8
    coeffs = [r for r in rows if r["kind"] == "coefficient"]
    assert len(coeffs) == 31 ** 2


def test_solve_matches_dense_solve():
    cfg = ExperimentConfig(p_range=(3, 3), level_range=(3, 3), tol=1e-12)
    H, res, grid, phys, vals = solve_once(cfg, 3, 3, npts=5)
    f = assemble_rhs(H.levels[-1].spaces, H.geometry)
    ref = scipy.linalg.solve(H.fine_B.toarray(), f, assume_a="pos")
    assert np.allclose(res.u, ref, rtol=1e-9, atol=1e-12 * np.abs(ref).max())
    assert np.allclose(grid, phys)


def test_solve_zero_rhs_zero_iterations():
    H = build_hierarchy(3, 4)
    res = solve(H, rhs=np.zeros(H.fine_B.shape[0]))
    assert res.iterations == 0 and not res.u.any()


def test_solve_annulus_3d_runs(tmp_path):
    out = tmp_path / "s.csv"
    rc = main(["solve", "--d", "3", "--geometry", "quarter-annulus-3d", "--p", "3", "--level", "2",
               "--samples", "3", "--out", str(out)])
    assert rc == 0
    rows = read_csv(out)
    assert "x2" in rows[0]
