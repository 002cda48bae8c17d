"""
Service functions behind the management commands.

Each ``run_*`` function does the work of one command: it reads inputs,
calls the library and writes every output file into a directory. Commands
only parse options, call one of these inside ``record_run`` and print a
summary, so the same work can be driven from tests or tasks.
"""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from django.db import DatabaseError

from . import __version__, analysis, formats, inference, simulate
from .core import link_probabilities
from .exceptions import InvalidParameterError
from .models import Run, StudyReplicate

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


@dataclass
class RunRecord:
    """What goes into manifest.json and the Run ledger row."""

    command: str
    output_path: Path
    config: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    input_paths: list = field(default_factory=list)
    runtime_seconds: float | None = None
    run: Run | None = None

    def manifest(self):
        return {
            "command": self.command,
            "config": self.config,
            "seeds": self.seeds,
            "inputs": [str(p) for p in self.input_paths],
            "output": str(self.output_path),
            "version": __version__,
            "runtime_seconds": self.runtime_seconds,
        }


def prepare_output(path):
    """
    Create the output directory.

    Raises:
        OSError: If the directory cannot be created or is not writable
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    marker = path / ".write-test"
    marker.write_text("")
    marker.unlink()
    return path


@contextmanager
def record_run(command, output_path, config=None, seeds=None, input_paths=None):
    """
    Time a command and leave its manifest behind.

    A ``Run`` row is created up front when the ledger tables exist, so the
    body can attach rows to ``record.run``. Once the body finishes without
    raising, the manifest is written (replacing any earlier one) and the row
    gets the final config and runtime; if the body raises, the row and any
    rows attached to it are deleted. A missing ledger is logged and
    otherwise ignored so the file outputs never depend on the database.

    Example:
        >>> with record_run("fit", out, config=cfg.as_dict()) as record:
        ...     record.input_paths.append(groups_path)
        ...     run_fit(groups, cfg, record.output_path)
    """
    record = RunRecord(
        command=command,
        output_path=prepare_output(output_path),
        config=dict(config or {}),
        seeds=list(seeds or []),
        input_paths=list(input_paths or []),
    )
    try:
        record.run = Run.objects.create(
            command=command,
            output_path=str(record.output_path),
            version=__version__,
        )
    except DatabaseError as exc:
        logger.warning("Run ledger unavailable (run `manage.py migrate`): %s", exc)

    started = time.perf_counter()
    try:
        yield record
    except BaseException:
        # a failed command leaves no ledger row behind
        if record.run is not None:
            record.run.delete()
            record.run = None
        raise
    record.runtime_seconds = time.perf_counter() - started
    formats.write_json(record.output_path / MANIFEST_NAME, record.manifest())
    if record.run is not None:
        record.run.config = record.config
        record.run.seeds = record.seeds
        record.run.input_paths = [str(p) for p in record.input_paths]
        record.run.runtime_seconds = record.runtime_seconds
        record.run.save()


def run_simulate(cfg, output_path, params=None, node_labels=()):
    """
    Simulate one data set and write its ground truth.

    Args:
        cfg: SimConfig; ``cfg.seed`` drives both parameter sampling and
            the trajectory
        output_path: Directory for params.json, groups.csv and leaders.csv
        params: Optional ModelParams to simulate from instead of sampling
        node_labels: Labels for the nodes (``v1..vn`` when empty)

    Returns:
        Tuple of (params, leaders, groups)
    """
    output_path = Path(output_path)
    rng = simulate.make_rng(cfg.seed)
    if params is None:
        params = simulate.sample_parameters(cfg, rng)
    leaders, groups = simulate.simulate_trajectory(
        params, cfg.T, rng, node_labels=node_labels
    )
    formats.write_params(
        output_path / "params.json", params, groups.node_labels, T=cfg.T
    )
    formats.write_groups(output_path / "groups.csv", groups)
    formats.write_leaders(output_path / "leaders.csv", leaders.z, groups.node_labels)
    return params, leaders, groups


@dataclass
class FitOutcome:
    result: inference.FitResult
    segments: list
    density: float
    independent: inference.FitResult | None = None

    @property
    def independent_density(self):
        if self.independent is None:
            return None
        return analysis.graph_density(self.independent.linked.A)


def _write_fit(output_path, result, groups, prefix=""):
    labels = groups.node_labels
    linked = result.linked
    formats.write_params(
        output_path / f"{prefix}params.json",
        result.params,
        labels,
        T=groups.T,
        log_marginal=result.log_marginal,
        constrained=result.constrained,
        converged=result.converged,
        iterations=result.iterations,
        graph_density=analysis.graph_density(linked.A),
    )
    formats.write_matrix(output_path / f"{prefix}A.csv", linked.A)
    formats.write_matrix(output_path / f"{prefix}B.csv", linked.B)
    formats.write_matrix(output_path / f"{prefix}C.csv", linked.C)
    formats.write_matrix(output_path / f"{prefix}rho.csv", linked.rho)
    formats.write_matrix(output_path / f"{prefix}R.csv", result.posteriors.R)
    formats.write_rows(
        output_path / f"{prefix}loglik_trace.csv",
        ["iteration", "log_marginal"],
        [(k, repr(float(v))) for k, v in enumerate(result.loglik_trace)],
    )


def run_fit(groups, cfg, output_path, start=None, compare_independent=False):
    """
    Fit a groups matrix and write every fit artefact.

    Writes params.json, A/B/C/rho/R matrices, co_occurrence.csv,
    half_weight.csv, labels.txt, leaders.csv (with segment starts),
    segments.csv and loglik_trace.csv. With ``compare_independent`` the
    classical hub model is fitted too and written with an ``independent_``
    prefix.

    Args:
        groups: GroupedData to fit
        cfg: FitConfig
        output_path: Output directory (must exist)
        start: Optional ModelParams warm start
        compare_independent: Also fit alpha = beta = gamma = 0

    Returns:
        FitOutcome

    Raises:
        InvalidParameterError: If a warm start does not match the data
        ImpossibleDataError: If the data has zero probability under the start
    """
    output_path = Path(output_path)
    if start is not None and start.n != groups.n:
        raise InvalidParameterError(
            f"warm start has n={start.n}, groups have n={groups.n}"
        )

    result = inference.fit_em(groups, cfg, start=start)
    leaders, segments = inference.decode_leaders(result, groups)

    _write_fit(output_path, result, groups)
    formats.write_labels(output_path, groups.node_labels)
    formats.write_matrix(
        output_path / "co_occurrence.csv", analysis.co_occurrence(groups), fmt="%d"
    )
    formats.write_matrix(
        output_path / "half_weight.csv", analysis.half_weight_index(groups)
    )
    formats.write_leaders(
        output_path / "leaders.csv",
        leaders,
        groups.node_labels,
        segment_starts=[start for start, _ in segments],
    )
    formats.write_rows(
        output_path / "segments.csv",
        ["start", "stop", "leader"],
        [(s, e, groups.node_labels[leaders[s]]) for s, e in segments],
    )

    outcome = FitOutcome(
        result=result,
        segments=segments,
        density=analysis.graph_density(result.linked.A),
    )
    if compare_independent and not cfg.constrain_independent:
        baseline_cfg = inference.FitConfig(
            **{**cfg.as_dict(), "constrain_independent": True}
        )
        outcome.independent = inference.fit_em(groups, baseline_cfg)
        _write_fit(output_path, outcome.independent, groups, prefix="independent_")
    return outcome


def run_preprocess(raw, output_path):
    """
    Reduce raw events to one group each and write groups.csv plus a report.

    Returns:
        PreprocessResult
    """
    output_path = Path(output_path)
    result = analysis.preprocess(raw)
    formats.write_groups(output_path / "groups.csv", result.groups)
    formats.write_json(
        output_path / "preprocess_report.json",
        {
            "events": result.groups.T,
            "nodes": result.groups.n,
            "removed_nodes": list(result.removed_labels),
            "retained": [
                {
                    "time": event.time_tag,
                    "candidates": len(event.candidates),
                    "retained_index": index,
                }
                for event, index in zip(raw.events, result.retained)
            ],
        },
    )
    return result


def run_bootstrap(
    fit_dir, cfg, output_path, B, level, seed, jobs=1, max_failure_rate=0.10
):
    """
    Parametric bootstrap from a directory written by ``run_fit``.

    Writes replicates.csv (one alpha,beta,gamma row per successful
    replicate) and ci.json.

    Returns:
        BootstrapResult

    Raises:
        FormatError: If the fit directory has no readable params.json
        BootstrapError: If too many replicates fail
    """
    output_path = Path(output_path)
    params, document = formats.read_params(Path(fit_dir) / "params.json")
    if "T" not in document:
        raise InvalidParameterError(f"{fit_dir} params.json does not record T")
    constrained = bool(document.get("constrained", False))
    if constrained and not cfg.constrain_independent:
        cfg = inference.FitConfig(
            **{**cfg.as_dict(), "constrain_independent": True}
        )

    result = analysis.parametric_bootstrap(
        params,
        (int(document["T"]), params.n),
        B,
        level,
        cfg,
        seed,
        jobs=jobs,
        max_failure_rate=max_failure_rate,
    )
    formats.write_rows(
        output_path / "replicates.csv",
        list(analysis.ADJUSTMENTS),
        [[repr(float(v)) for v in row] for row in result.estimates],
    )
    formats.write_json(
        output_path / "ci.json",
        {
            "level": level,
            "replicates": result.replicates,
            "failures": result.failures,
            "seed": seed,
            "parameters": result.summary(),
        },
    )
    return result


def run_eval(estimated_path, true_path):
    """
    Compare an estimated params file against the truth.

    Returns:
        Dict with ``n``, ``rmse_A`` and ``abs_error`` per adjustment

    Raises:
        InvalidParameterError: If the two files have different n
    """
    estimated, _ = formats.read_params(estimated_path)
    truth, _ = formats.read_params(true_path)
    if estimated.n != truth.n:
        raise InvalidParameterError(
            f"estimated params have n={estimated.n}, true params have n={truth.n}"
        )
    A_hat = link_probabilities(estimated).A
    A_true = link_probabilities(truth).A
    return {
        "n": truth.n,
        "rmse_A": analysis.rmse(A_hat, A_true),
        "abs_error": {
            name: abs(getattr(estimated, name) - getattr(truth, name))
            for name in analysis.ADJUSTMENTS
        },
    }


def create_study(run, n, T, alpha, beta, gamma, replicates, seed):
    """Create the pending replicate rows of a study run."""
    return StudyReplicate.objects.bulk_create(
        StudyReplicate(
            run=run,
            index=index,
            seed=[seed, index],
            n=n,
            T=T,
            alpha=alpha,
            beta=beta,
            gamma=gamma,
        )
        for index in range(replicates)
    )


def simulate_replicate(replicate):
    """
    Sample, simulate and fit both models for one study replicate.

    Returns:
        Dict of the fields to store on the replicate
    """
    seed, index = replicate.seed
    cfg = simulate.SimConfig(
        n=replicate.n,
        T=replicate.T,
        alpha=replicate.alpha,
        beta=replicate.beta,
        gamma=replicate.gamma,
        seed=seed,
    )
    rng = simulate.replicate_rng(seed, index)
    params = simulate.sample_parameters(cfg, rng)
    _, groups = simulate.simulate_trajectory(params, cfg.T, rng)
    A_true = link_probabilities(params).A

    temporal = inference.fit_em(groups, inference.FitConfig.from_settings())
    independent = inference.fit_em(
        groups, inference.FitConfig.from_settings(constrain_independent=True)
    )
    return {
        "rmse_temporal": analysis.rmse(temporal.linked.A, A_true),
        "rmse_independent": analysis.rmse(independent.linked.A, A_true),
        "log_marginal_temporal": temporal.log_marginal,
        "log_marginal_independent": independent.log_marginal,
    }


def summarize_study(run):
    """
    Mean and standard deviation (x 10^3 for the sd) of the A RMSE per method
    over the finished replicates of a study run.
    """
    done = list(run.replicates.filter(status=StudyReplicate.Status.DONE))
    summary = {
        "replicates": run.replicates.count(),
        "done": len(done),
        "failed": run.replicates.filter(status=StudyReplicate.Status.FAILED).count(),
        "temporal_better": sum(r.rmse_temporal < r.rmse_independent for r in done),
    }
    for method in ("independent", "temporal"):
        values = np.array([getattr(r, f"rmse_{method}") for r in done])
        summary[method] = {
            "mean_rmse": float(values.mean()) if values.size else None,
            "sd_rmse_x1000": (
                float(values.std(ddof=1) * 1000) if values.size > 1 else None
            ),
        }
    return summary


def write_study(run, output_path):
    output_path = Path(output_path)
    rows = [
        (
            r.index,
            r.seed[0],
            r.status,
            r.rmse_independent,
            r.rmse_temporal,
            r.log_marginal_independent,
            r.log_marginal_temporal,
            r.error,
        )
        for r in run.replicates.all()
    ]
    formats.write_rows(
        output_path / "study.csv",
        [
            "replicate",
            "seed",
            "status",
            "rmse_independent",
            "rmse_temporal",
            "log_marginal_independent",
            "log_marginal_temporal",
            "error",
        ],
        rows,
    )
    summary = summarize_study(run)
    formats.write_json(output_path / "summary.json", summary)
    return summary
