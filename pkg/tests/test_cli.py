import numpy as np
import pytest

from vembiot.cli import main, preset_text, read_config
from vembiot.dofspace import ConfigurationError
from vembiot.mesh import generate, read_mesh
from vembiot.vtk import write_polydata


def test_mesh_command(tmp_path, capsys):
    out = tmp_path / "sub" / "m.poly"
    assert main(["mesh", "--family", "hex", "--n", "8", "--out", str(out)]) == 0
    m = read_mesh(out)
    m.validate()
    assert "violations" in capsys.readouterr().out


def test_mesh_command_bad_size(tmp_path):
    assert main(["mesh", "--family", "tri", "--n", "0", "--out", str(tmp_path / "x")]) == 2
    assert main(["mesh", "--family", "oct", "--n", "2", "--out", str(tmp_path / "x")]) == 2


def test_mesh_command_is_deterministic(tmp_path):
    a, b = tmp_path / "a.poly", tmp_path / "b.poly"
    for p in (a, b):
        assert main(["mesh", "--family", "quad", "--distortion", "0.2", "--seed", "7", "--n", "6", "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_presets_parse():
    for case in ("steady_space", "time_only", "space_time", "footing"):
        cfg = read_config(preset_text(case))
        assert cfg.case == case
    assert read_config(preset_text("time_only")).steps == [2, 4, 8, 16, 32, 64]
    assert read_config(preset_text("space_time")).levels == [8, 16, 32, 64]


@pytest.mark.parametrize("text", [
    "[case\nid = x\n",
    "[case]\nid = nonexistent\n",
    "[case]\nid = footing\n[mesh]\nfamily = oct\n",
    "[case]\nid = footing\n[params]\nfoo = 1\n",
    "[case]\nid = footing\n[mesh]\nn = zero\n",
])
def test_malformed_configs(text, tmp_path):
    with pytest.raises(ConfigurationError):
        read_config(text)
    p = tmp_path / "c.ini"
    p.write_text(text)
    assert main(["convergence", "--config", str(p)]) == 2


def test_missing_config_and_bad_params(tmp_path):
    assert main(["convergence", "--config", str(tmp_path / "none.ini")]) == 2
    assert main(["run", "--case", "footing", "--lambda", "-1", "--out", str(tmp_path)]) == 2
    assert main(["run"]) == 2
    assert main(["convergence", "--case", "time_only", "--dt", "0.3", "--out", str(tmp_path)]) == 2


def test_convergence_command_writes_table(tmp_path, capsys):
    out = tmp_path / "conv"
    code = main(["convergence", "--case", "steady_space", "--levels", "8,16", "--out", str(out)])
    text = (out / "steady_space.csv").read_text().splitlines()
    assert text[0].startswith("Ndof,h,e1(u),r")
    assert len(text) == 3
    assert code in (0, 1)
    # byte-identical on rerun
    first = (out / "steady_space.csv").read_bytes()
    main(["convergence", "--case", "steady_space", "--levels", "8,16", "--out", str(out)])
    assert (out / "steady_space.csv").read_bytes() == first


def test_convergence_regression_failure_exits_one(tmp_path, capsys):
    # two coarse levels of the time study on a coarse mesh: psi is dominated by the spatial error
    code = main(["convergence", "--case", "time_only", "--levels", "4", "--dt", "0.5,0.25", "--out", str(tmp_path)])
    assert code == 1
    assert "psi0" in capsys.readouterr().err


def test_run_footing_zero_load_is_at_rest(tmp_path):
    out = tmp_path / "new" / "dir"
    assert main(["run", "--case", "footing", "--levels", "6", "--zero-load", "--vtk", "--out", str(out)]) == 0
    vtks = sorted(out.glob("footing_*.vtk"))
    assert len(vtks) == 6
    rows = (out / "footing_summary.csv").read_text().splitlines()[1:]
    assert all(float(v) == 0.0 for r in rows for v in r.split(",")[2:])


def test_run_footing_snapshots(tmp_path):
    assert main(["run", "--case", "footing", "--levels", "8", "--vtk", "--out", str(tmp_path)]) == 0
    vtks = sorted(tmp_path.glob("footing_*.vtk"))
    assert len(vtks) == 6  # initial state plus five steps
    text = vtks[-1].read_text()
    for name in ("displacement", "pressure", "total_pressure"):
        assert name in text
    assert "t=0.5" in text.splitlines()[1]


def test_run_manufactured_and_dumps(tmp_path):
    assert main(["run", "--case", "steady_space", "--levels", "4", "--dump-projectors", "--solver", "iterative",
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "matrices" / "a1.mtx").exists()
    assert (tmp_path / "projectors_cell0.csv").exists()


def test_vtk_writer(tmp_path):
    m = generate("hex", 2)
    u = np.ones((m.n_vertices, 2))
    p = tmp_path / "m.vtk"
    write_polydata(p, m, {"displacement": u, "pressure": np.zeros(m.n_vertices)},
                   {"total_pressure": np.arange(m.n_cells)}, displacement=u, warp=0.5)
    lines = p.read_text().splitlines()
    assert lines[0] == "# vtk DataFile Version 3.0" and lines[3] == "DATASET POLYDATA"
    assert lines[4] == f"POINTS {m.n_vertices} double"
    x0 = [float(v) for v in lines[5].split()]
    assert np.allclose(x0[:2], m.vertices[0] + 0.5)
    assert f"POLYGONS {m.n_cells} {sum(len(c) + 1 for c in m.cells)}" in lines
    assert "VECTORS displacement double" in lines and "SCALARS total_pressure double 1" in lines
    with pytest.raises(ValueError):
        write_polydata(p, m, {"pressure": np.zeros(3)})
