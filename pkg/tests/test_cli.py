from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from frax.cli import build_parser, main, transport_problem
from frax.config import FraxConfig
from frax.convergence import ConvergenceReport
from frax.geometry import Fracture
from frax.io import read_mesh, read_vtk, write_fractures, write_mesh
from tests.conftest import unit_square_mesh


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def run_file(path, text):
    path.write_text(text)
    return str(path)


class TestParser:
    """Test cases for the argument parser."""

    def test_modes(self):
        """Test that the four modes are accepted."""
        parser = build_parser()
        for mode in ("solve", "transport", "bench", "mesh"):
            assert parser.parse_args([mode]).mode == mode

    def test_unknown_benchmark(self):
        """Test that unknown benchmark ids are rejected by the parser."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["solve", "--benchmark", "nope"])


class TestMain:
    """Test cases for the command-line drivers."""

    def test_solve_benchmark(self, workdir):
        """Test that solve writes the summary, profiles and fields."""
        config = run_file(workdir / "run.toml", "[flow]\nbenchmark = 'regular2d-conductive'\n[output]\nsamples = 20\n")

        assert main(["solve", "--config", config, "--out", "out"]) == 0
        summary = pd.read_csv(workdir / "out" / "summary.csv")
        assert summary.loc[0, "cells"] == 1352
        assert summary.loc[0, "residual_mass"] <= 1e-10
        profile = pd.read_csv(workdir / "out" / "profile_y_0.7.csv")
        assert list(profile.columns) == ["s", "x", "y", "value"]
        assert len(profile) == 20
        _, _, fields = read_vtk(workdir / "out" / "fields.vtk")
        assert set(fields) == {"pressure", "postprocessed_pressure", "velocity_magnitude"}

    def test_transport(self, workdir):
        """Test that transport writes the time series."""
        config = run_file(
            workdir / "run.toml",
            "[flow]\nbenchmark = 'regular2d-conductive'\n[transport]\nfinal_time = 0.02\n[output]\nvtk = false\n",
        )

        assert main(["transport", "--config", config, "--out", "out"]) == 0
        history = pd.read_csv(workdir / "out" / "transport.csv")
        assert set(history["quantity"]) == {"mass", "boundary_outflux", "source_rate", "mean_concentration"}
        assert history["time"].max() == pytest.approx(0.02)
        assert not (workdir / "out" / "fields.vtk").exists()

    def test_mesh_mode(self, workdir):
        """Test that mesh mode writes a readable mesh."""
        assert main(["mesh", "--benchmark", "regular2d-conductive", "--out", "out"]) == 0

        mesh = read_mesh(workdir / "out" / "mesh.txt")
        assert mesh.n_cells == 1352
        assert (mesh.fracture_tags >= 0).sum() == 90

    def test_mesh_file_problem(self, workdir):
        """Test a problem read from a mesh file."""
        write_mesh(unit_square_mesh(4), workdir / "square.txt")
        config = run_file(workdir / "run.toml", "[flow]\nmesh = 'square.txt'\ndirichlet = 2.0\n")

        assert main(["solve", "--config", config, "--out", "out"]) == 0
        summary = pd.read_csv(workdir / "out" / "summary.csv")
        assert summary.loc[0, "cells"] == 32
        assert summary.loc[0, "benchmark"] == "square"

    def test_level_override(self, workdir):
        """Test that --level beats the run file."""
        assert main(["mesh", "--benchmark", "regular2d-conductive", "--level", "1", "--out", "out"]) == 0

        summary = pd.read_csv(workdir / "out" / "summary.csv")
        assert summary.loc[0, "level"] == 1
        assert summary.loc[0, "cells"] == 4 * 1352

    def test_bad_config(self, workdir):
        """Test that configuration errors give exit status 2."""
        config = run_file(workdir / "run.toml", "[flow]\nsolvr = 'cg'\n")

        assert main(["solve", "--config", config]) == 2

    def test_missing_problem(self, workdir):
        """Test that a run without benchmark or mesh fails cleanly."""
        assert main(["solve"]) == 2

    def test_missing_geometry(self, workdir):
        """Test that a missing outcrop geometry gives exit status 2."""
        assert main(["solve", "--benchmark", "sotra2d", "--out", "out"]) == 2

    @pytest.mark.slow
    def test_bench(self, workdir):
        """Test that bench writes the convergence table."""
        config = run_file(
            workdir / "run.toml",
            "[flow]\nbenchmark = 'regular2d-conductive'\nmax_level = 0\n[transport]\nenabled = false\n",
        )

        assert main(["bench", "--config", config, "--out", "out"]) == 0
        table = pd.read_csv(workdir / "out" / "convergence.csv")
        assert table["level"].tolist() == [0]
        assert table.loc[0, "velocity_error"] > 0

    def test_transport_with_source(self, workdir):
        """Test that the configured source reaches the transport mass balance."""
        write_mesh(unit_square_mesh(4), workdir / "square.txt")
        config = run_file(
            workdir / "run.toml",
            "[flow]\nmesh = 'square.txt'\ndirichlet = 2.0\nsource = -0.5\n"
            "[transport]\ntime_step = 0.01\nfinal_time = 0.05\n[output]\nvtk = false\n",
        )

        assert main(["transport", "--config", config, "--out", "out"]) == 0
        history = pd.read_csv(workdir / "out" / "transport.csv")
        series = history.pivot(index="time", columns="quantity", values="value").sort_index()
        mass = np.concatenate([[0.0], series["mass"].to_numpy()])
        rate = series["source_rate"].to_numpy() - series["boundary_outflux"].to_numpy()
        assert len(series) == 5
        assert (series["source_rate"] < 0).all()
        assert np.allclose(np.diff(mass), 0.01 * rate, rtol=1e-8, atol=1e-12)

    def test_bench_forwards_case_options(self, workdir, monkeypatch):
        """Test that bench passes geometry, penalty and transport settings on."""
        calls = {}

        def fake_convergence(benchmark_id, max_level, reference_level, **kwargs):
            calls.update(kwargs, benchmark=benchmark_id, reference_level=reference_level)
            return ConvergenceReport(benchmark_id, reference_level, pd.DataFrame({"level": [0]}))

        monkeypatch.setattr("frax.cli.run_convergence", fake_convergence)
        write_fractures([Fracture((100.0, 100.0), (300.0, 500.0), 1.0)], workdir / "sotra.txt")
        config = run_file(
            workdir / "run.toml",
            "[flow]\nbenchmark = 'sotra2d'\ngeometry = 'sotra.txt'\nmax_level = 1\npenalty = 1e4\n"
            "[transport]\ntime_step = 0.01\nfinal_time = 0.2\nporosity = 0.2\ninflow = 0.5\n",
        )

        assert main(["bench", "--config", config, "--out", "out"]) == 0
        assert calls["benchmark"] == "sotra2d"
        assert calls["reference_level"] == 2
        assert calls["geometry_path"] == Path("sotra.txt")
        assert calls["penalty"] == 1e4
        problem = calls["transport_problem"](2)
        assert problem.time_step == pytest.approx(0.0025)
        assert problem.final_time == pytest.approx(0.2)
        assert problem.porosity == pytest.approx(0.2)
        assert problem.inflow == pytest.approx(0.5)
        assert (workdir / "out" / "convergence.csv").exists()

    def test_transport_problem_per_level(self, workdir):
        """Test that the configured step is halved per level."""
        run = FraxConfig(run_file(workdir / "run.toml", "[flow]\nbenchmark = 'hydrocoin'\n")).run_config("solve")

        assert transport_problem(run, 0).time_step == pytest.approx(5e-3)
        assert transport_problem(run, 3).time_step == pytest.approx(5e-3 / 8)

    @pytest.mark.slow
    def test_bench_with_geometry(self, workdir):
        """Test an outcrop refinement study on a user-supplied fracture file."""
        write_fractures([Fracture((100.0, 100.0), (300.0, 500.0), 1.0)], workdir / "sotra.txt")
        config = run_file(
            workdir / "run.toml",
            "[flow]\nbenchmark = 'sotra2d'\ngeometry = 'sotra.txt'\nmax_level = 0\n[transport]\nenabled = false\n",
        )

        assert main(["bench", "--config", config, "--out", "out"]) == 0
        table = pd.read_csv(workdir / "out" / "convergence.csv")
        assert table["level"].tolist() == [0]
        assert table.loc[0, "pressure_error"] > 0
