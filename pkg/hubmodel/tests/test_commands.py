import json
from io import StringIO

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from hubmodel.models import Run, StudyReplicate

pytestmark = pytest.mark.django_db


def run(*args):
    out = StringIO()
    call_command(*args, stdout=out)
    return out.getvalue()


def simulate_into(path, *extra):
    run(
        "simulate",
        "--output", str(path),
        "--n", "5",
        "--T", "80",
        "--alpha", "log-n",
        "--beta", "2",
        "--gamma", "-1",
        "--seed", "7",
        *extra,
    )  # fmt: skip
    return path


def read_json(path):
    return json.loads(path.read_text())


class TestSimulateCommand:
    def test_writes_outputs(self, tmp_path):
        out = simulate_into(tmp_path / "sim")
        for name in ("params.json", "groups.csv", "leaders.csv", "manifest.json"):
            assert (out / name).exists()
        manifest = read_json(out / "manifest.json")
        assert manifest["command"] == "simulate"
        assert manifest["seeds"] == [7]
        assert Run.objects.filter(command="simulate").count() == 1

    def test_same_seed_same_files(self, tmp_path):
        first = simulate_into(tmp_path / "a")
        second = simulate_into(tmp_path / "b")
        for name in ("params.json", "groups.csv", "leaders.csv"):
            assert (first / name).read_bytes() == (second / name).read_bytes()

    def test_single_group(self, tmp_path):
        run("simulate", "--output", str(tmp_path), "--n", "3", "--T", "1")
        lines = (tmp_path / "groups.csv").read_text().splitlines()
        assert len(lines) == 2

    def test_sample_from(self, tmp_path):
        source = simulate_into(tmp_path / "sim")
        run(
            "simulate",
            "--output", str(tmp_path / "again"),
            "--T", "10",
            "--sample-from", str(source / "params.json"),
        )  # fmt: skip
        assert (
            read_json(tmp_path / "again" / "params.json")["theta"]
            == read_json(source / "params.json")["theta"]
        )

    def test_invalid_n_is_a_usage_error(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            run("simulate", "--output", str(tmp_path), "--n", "1", "--T", "5")
        assert excinfo.value.returncode == 2

    def test_invalid_alpha_is_a_usage_error(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            run(
                "simulate", "--output", str(tmp_path),
                "--n", "4", "--T", "5", "--alpha", "log-3n",
            )  # fmt: skip
        assert excinfo.value.returncode == 2


class TestFitCommand:
    def test_writes_outputs(self, tmp_path):
        sim = simulate_into(tmp_path / "sim")
        output = run("fit", str(sim / "groups.csv"), "--output", str(tmp_path / "fit"))
        fit = tmp_path / "fit"
        for name in (
            "params.json",
            "A.csv",
            "B.csv",
            "C.csv",
            "rho.csv",
            "R.csv",
            "co_occurrence.csv",
            "half_weight.csv",
            "labels.txt",
            "leaders.csv",
            "segments.csv",
            "loglik_trace.csv",
            "manifest.json",
        ):
            assert (fit / name).exists(), name
        document = read_json(fit / "params.json")
        assert document["T"] == 80
        assert document["constrained"] is False
        assert "Graph density" in output

    def test_warm_start_is_a_fixed_point(self, tmp_path):
        sim = simulate_into(tmp_path / "sim")
        flags = ("--em-tol", "1e-6", "--max-em-iters", "2000")
        run("fit", str(sim / "groups.csv"), "--output", str(tmp_path / "a"), *flags)
        first = read_json(tmp_path / "a" / "params.json")
        run(
            "fit", str(sim / "groups.csv"), "--output", str(tmp_path / "b"),
            "--init", str(tmp_path / "a" / "params.json"), *flags,
        )  # fmt: skip
        second = read_json(tmp_path / "b" / "params.json")
        assert first["converged"]
        assert abs(second["log_marginal"] - first["log_marginal"]) < 1e-5

    def test_independent(self, tmp_path):
        sim = simulate_into(tmp_path / "sim")
        run(
            "fit", str(sim / "groups.csv"), "--output", str(tmp_path / "fit"),
            "--independent",
        )  # fmt: skip
        document = read_json(tmp_path / "fit" / "params.json")
        assert document["constrained"] is True
        assert (document["alpha"], document["beta"], document["gamma"]) == (0, 0, 0)

    def test_compare_independent(self, tmp_path):
        sim = simulate_into(tmp_path / "sim")
        output = run(
            "fit", str(sim / "groups.csv"), "--output", str(tmp_path / "fit"),
            "--compare-independent",
        )  # fmt: skip
        assert (tmp_path / "fit" / "independent_params.json").exists()
        assert "Classical graph density" in output

    def test_malformed_row_names_line(self, tmp_path):
        groups = tmp_path / "groups.csv"
        groups.write_text("a,b,c\n1,0,1\n0,0,0\n")
        with pytest.raises(CommandError) as excinfo:
            run("fit", str(groups), "--output", str(tmp_path / "fit"))
        assert excinfo.value.returncode == 1
        assert ":3:" in str(excinfo.value)
        assert not Run.objects.filter(command="fit").exists()

    def test_failed_fit_leaves_no_run(self, tmp_path, monkeypatch):
        from hubmodel.exceptions import NumericalFailureError
        from hubmodel.management.commands import fit

        def fail(*args, **kwargs):
            raise NumericalFailureError("beta")

        monkeypatch.setattr(fit, "run_fit", fail)
        sim = simulate_into(tmp_path / "sim")
        with pytest.raises(CommandError) as excinfo:
            run("fit", str(sim / "groups.csv"), "--output", str(tmp_path / "fit"))
        assert excinfo.value.returncode == 1
        assert not Run.objects.filter(command="fit").exists()

    def test_bad_tolerance_is_a_usage_error(self, tmp_path):
        sim = simulate_into(tmp_path / "sim")
        with pytest.raises(CommandError) as excinfo:
            run(
                "fit", str(sim / "groups.csv"), "--output", str(tmp_path / "fit"),
                "--em-tol", "-1",
            )  # fmt: skip
        assert excinfo.value.returncode == 2


class TestPreprocessCommand:
    def test_report(self, tmp_path):
        raw = tmp_path / "raw.txt"
        raw.write_text(
            "# nodes: ann,bo,cy,dee\n"
            "d1 | ann,bo\n"
            "d2 | cy | ann,bo,cy\n"
            "d3 | bo,cy\n"
        )
        run("preprocess", str(raw), "--output", str(tmp_path / "pre"))
        report = read_json(tmp_path / "pre" / "preprocess_report.json")
        assert report["removed_nodes"] == ["dee"]
        assert [row["retained_index"] for row in report["retained"]] == [0, 1, 0]
        lines = (tmp_path / "pre" / "groups.csv").read_text().splitlines()
        assert lines[0] == "time,ann,bo,cy"
        assert lines[2] == "d2,1,1,1"

    def test_unparseable_line(self, tmp_path):
        raw = tmp_path / "raw.txt"
        raw.write_text("d1 | a\nd2\n")
        with pytest.raises(CommandError) as excinfo:
            run("preprocess", str(raw), "--output", str(tmp_path / "pre"))
        assert ":2:" in str(excinfo.value)


class TestBootstrapCommand:
    def test_two_replicates(self, tmp_path):
        sim = simulate_into(tmp_path / "sim")
        run("fit", str(sim / "groups.csv"), "--output", str(tmp_path / "fit"))
        output = run(
            "bootstrap", str(tmp_path / "fit"), "--output", str(tmp_path / "boot"),
            "--B", "2", "--seed", "3", "--max-em-iters", "40",
        )  # fmt: skip
        rows = (tmp_path / "boot" / "replicates.csv").read_text().splitlines()
        assert rows[0] == "alpha,beta,gamma"
        assert len(rows) == 3
        ci = read_json(tmp_path / "boot" / "ci.json")
        assert ci["replicates"] == 2
        assert set(ci["parameters"]) == {"alpha", "beta", "gamma"}
        values = [[float(v) for v in row.split(",")] for row in rows[1:]]
        for k, name in enumerate(("alpha", "beta", "gamma")):
            low, high = sorted(row[k] for row in values)
            expected = (low + 0.025 * (high - low), high - 0.025 * (high - low))
            bounds = (ci["parameters"][name]["lower"], ci["parameters"][name]["upper"])
            assert bounds == pytest.approx(expected, rel=1e-9, abs=1e-12)
        assert "percentile intervals" in output

    def test_level_out_of_range(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            run(
                "bootstrap", str(tmp_path), "--output", str(tmp_path / "boot"),
                "--level", "1.5",
            )  # fmt: skip
        assert excinfo.value.returncode == 2

    def test_missing_fit(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            run("bootstrap", str(tmp_path / "nope"), "--output", str(tmp_path / "b"))
        assert excinfo.value.returncode == 1
        assert not Run.objects.filter(command="bootstrap").exists()


class TestEvalCommand:
    def test_identical_files(self, tmp_path):
        sim = simulate_into(tmp_path / "sim")
        params = str(sim / "params.json")
        run("eval", params, params, "--output", str(tmp_path / "report.json"))
        report = read_json(tmp_path / "report.json")
        assert report["rmse_A"] == 0.0
        assert report["abs_error"] == {"alpha": 0.0, "beta": 0.0, "gamma": 0.0}

    def test_different_n(self, tmp_path):
        small = tmp_path / "small"
        run("simulate", "--output", str(small), "--n", "3", "--T", "5")
        large = simulate_into(tmp_path / "large")
        with pytest.raises(CommandError):
            run("eval", str(small / "params.json"), str(large / "params.json"))


class TestStudyCommand:
    def test_runs_replicates_inline(self, tmp_path):
        run(
            "study", "--output", str(tmp_path),
            "--n", "4", "--T", "40", "--alpha", "log-n",
            "--replicates", "2", "--seed", "1",
        )  # fmt: skip
        study = Run.objects.get(command="study")
        assert study.replicates.count() == 2
        assert not study.replicates.filter(
            status=StudyReplicate.Status.PENDING
        ).exists()
        summary = read_json(tmp_path / "summary.json")
        assert summary["replicates"] == 2
        lines = (tmp_path / "study.csv").read_text().splitlines()
        assert len(lines) == 3

    def test_summarize_unknown_run(self, tmp_path):
        with pytest.raises(CommandError) as excinfo:
            run("study", "--output", str(tmp_path), "--summarize", "999")
        assert excinfo.value.returncode == 2
