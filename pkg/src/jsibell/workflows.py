"""Command workflows: each CLI subcommand as a library function returning a report.

Every function writes its artefacts under ``config.out_dir`` (atomically,
deterministically) and returns a JSON-ready report whose numbers are
``{"value", "unit", "label"}`` quantities.
"""

from __future__ import annotations

import json
import logging
import warnings
from contextlib import contextmanager
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .bell import (
    binarised_reference,
    binned_cglmp,
    cglmp_inequality,
    cglmp_probabilities,
    cglmp_value,
    noise_tolerance,
    optimize_state,
    theoretical_cglmp,
)
from .config import RunConfig
from .core import JsiRecord, Scenario, WrappedDistribution, cglmp_basis_indices, grid_to_tensor
from .io import ingest_jsi, read_wrapped, write_json, write_jsi, write_table, write_wrapped
from .lhv import NoSignalingWarning, fw_visibility, lp_visibility, project_no_signaling, signaling_residual, uniform_behaviour
from .simulate import Instrument, NoiseModel, PhaseGrid, StateCoefficients, cglmp_phase_probabilities, periods_needed, synthesize_jsi
from .stats import DegenerateScoreError, bell_pvalue, poisson_bootstrap
from .wrapfit import fit_principal_fringes, model_from_truth, normalize, phase_calibrate, wrap

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LP_SWEEP_MAX_D = 10


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and a remediation hint."""

    def __init__(self, stage: str, cause: BaseException, hint: str = ""):
        self.stage, self.cause, self.hint = stage, cause, hint
        msg = f"[{stage}] {type(cause).__name__}: {cause}"
        if hint:
            msg += f" (hint: {hint})"
        super().__init__(msg)


def report_schema() -> dict:
    return json.loads(resources.files("jsibell").joinpath("report.schema.json").read_text(encoding="utf-8"))


def quantity(value, unit: str, label: str) -> dict:
    return {"value": None if value is None else float(value), "unit": unit, "label": label}


def _report(command: str, config: RunConfig, **body) -> dict:
    return {"schema_version": SCHEMA_VERSION, "tool_version": __version__, "command": command, "config": config.to_dict(), **body}


def _out(config: RunConfig) -> Path:
    return Path(config.out_dir)


def _finish(config: RunConfig, report: dict, name: str = "report.json") -> dict:
    write_json(_out(config) / name, report)
    return report


def resolve_state(config: RunConfig, d: int | None = None) -> StateCoefficients:
    d = config.d if d is None else d
    if config.state == "max":
        return StateCoefficients.maximally_entangled(d)
    if config.state == "optimal":
        return optimize_state(d)[0]
    return StateCoefficients.from_unnormalized(config.state)


def _scenario_dict(sc: Scenario) -> dict:
    return {"d": sc.d, "M": sc.M, "N": sc.N}


@contextmanager
def _stage(name: str, hint: str = ""):
    """Re-raise anything but a StageError as a StageError tagged ``name``."""
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc, hint) from exc


def _table(config: RunConfig, stem: str, header: list[str], rows: list[list]) -> str:
    """Write plot data as CSV or JSON (per ``config.format``); returns the file name."""
    if config.format == "json":
        name = f"{stem}.json"
        write_json(_out(config) / name, {"columns": header, "rows": rows})
    else:
        name = f"{stem}.csv"
        write_table(_out(config) / name, header, rows)
    return name


def _matrix_rows(values: np.ndarray) -> tuple[list[str], list[list]]:
    n_cols = values.shape[1]
    header = ["row", *[f"c{j}" for j in range(n_cols)]]
    return header, [[i, *row] for i, row in enumerate(values.tolist())]


# -- simulate / ingest ---------------------------------------------------------


def simulate_record(config: RunConfig) -> JsiRecord:
    sc = config.scenario
    instrument = Instrument(config.delta_t, config.sigma_t)
    periods = config.periods_covered or periods_needed(sc, instrument, config.envelope_mass_tol)
    grid = PhaseGrid(sc, periods_covered=periods)
    noise = NoiseModel(config.visibility, config.jitter_sigma, config.total_coincidences)
    return synthesize_jsi(
        sc,
        grid,
        resolve_state(config),
        noise,
        seed=config.seed,
        instrument=instrument,
        order=config.quadrature_order,
        mass_tol=config.envelope_mass_tol,
    )


def run_simulate(config: RunConfig) -> dict:
    with _stage("simulate", "check scenario, noise and grid settings"):
        jsi = simulate_record(config)
    write_jsi(_out(config) / "jsi.csv", jsi)
    report = _report(
        "simulate",
        config,
        scenario=_scenario_dict(config.scenario),
        total_counts=quantity(int(np.asarray(jsi.counts).sum()), "counts", "total coincidences"),
        grid_shape=list(jsi.counts.shape),
        artifacts={"jsi": "jsi.csv", "jsi_meta": "jsi.csv.json"},
    )
    return _finish(config, report)


def load_input(config: RunConfig) -> JsiRecord:
    if config.input is None:
        raise StageError("ingest", ValueError("no input file configured"), "set 'input' in the config")
    try:
        return ingest_jsi(config.input, config.input_format)
    except FileNotFoundError as exc:
        raise StageError("ingest", exc, "check the 'input' path") from exc
    except ValueError as exc:
        raise StageError("ingest", exc, "check the CSV layout and axis metadata") from exc


def run_ingest(config: RunConfig) -> dict:
    jsi = load_input(config)
    write_jsi(_out(config) / "jsi.csv", jsi)
    ax = jsi.axis_a
    report = _report(
        "ingest",
        config,
        grid_shape=list(jsi.counts.shape),
        total_counts=quantity(int(np.asarray(jsi.counts).sum()), "counts", "total coincidences"),
        axis_a_range=[quantity(ax.min(), "Hz", "axis_a min"), quantity(ax.max(), "Hz", "axis_a max")],
        artifacts={"jsi": "jsi.csv", "jsi_meta": "jsi.csv.json"},
    )
    return _finish(config, report)


# -- fit + wrap ----------------------------------------------------------------


def calibrate_and_wrap(jsi: JsiRecord, config: RunConfig, scenario: Scenario | None = None):
    """Fit (or take ground truth), calibrate and wrap; returns ``(scenario, model, result, calibration_info)``."""
    info: dict = {"requested": config.calibration}
    model = None
    if config.calibration in ("auto", "fit"):
        try:
            with _stage("fit", "need three resolvable principal fringes; raise counts or visibility"):
                model = fit_principal_fringes(jsi, config.d)
            info["used"] = "fit"
        except StageError as exc:
            if config.calibration == "fit" or not jsi.meta.get("truth"):
                raise
            info["used"] = "truth"
            info["fallback_reason"] = str(exc.cause)
    if model is None:
        with _stage("calibrate", "ground-truth calibration needs a synthetic record"):
            model = model_from_truth(jsi)
        info.setdefault("used", "truth")
    info["period_bins"] = quantity(model.period_bins, "bins", "outcomes per 2pi period")
    info["offset_bins"] = quantity(model.offset_bins, "bins", "row+column index of the central fringe")
    info["raw_period"] = quantity(model.raw_period, "bins", "unconstrained fitted period")
    if scenario is None:
        scenario = Scenario(model.d, model.M)
    with _stage("calibrate", "fitted period must equal d*M of the configured scenario"):
        cal = phase_calibrate(jsi, model, scenario)
    info["residual_bins"] = quantity(cal.residual_bins, "bins", "sub-bin calibration residual")
    with _stage("wrap", "the grid must contain at least one complete 2pi x 2pi cell"):
        result = wrap(cal, scenario)
    return scenario, model, result, info


def run_wrap(config: RunConfig) -> dict:
    jsi = load_input(config)
    scenario, _, result, cal_info = calibrate_and_wrap(jsi, config)
    write_wrapped(_out(config) / "wrapped.csv", result.wrapped)
    report = _report(
        "wrap",
        config,
        scenario=_scenario_dict(scenario),
        calibration=cal_info,
        wrap=_wrap_info(result),
        artifacts={"wrapped": "wrapped.csv", "wrapped_meta": "wrapped.csv.json"},
    )
    return _finish(config, report)


def _wrap_info(result) -> dict:
    return {
        "cells": list(result.cells),
        "included_counts": quantity(result.included_counts, "counts", "counts in complete cells"),
        "excluded_counts": quantity(result.excluded_counts, "counts", "counts in partial edge cells"),
    }


# -- Bell value, p-value, locality --------------------------------------------


def _cglmp_counts(wrapped: WrappedDistribution) -> np.ndarray:
    xs, ys = cglmp_basis_indices(wrapped.scenario)
    return grid_to_tensor(wrapped.values, wrapped.scenario)[:, :, list(xs)][:, :, :, list(ys)]


def bell_analysis(wrapped: WrappedDistribution, config: RunConfig) -> dict:
    """I_d, bootstrap sigma and the McDiarmid p-value bound for wrapped counts."""
    sc = wrapped.scenario
    with _stage("normalize", "every (x, y) block needs counts"):
        P = normalize(wrapped, sc)
    I = cglmp_value(cglmp_probabilities(P, sc))
    with _stage("bootstrap"):
        bs = poisson_bootstrap(
            wrapped, sc, lambda Q: cglmp_value(cglmp_probabilities(Q, sc)), R=config.bootstrap_resamples, seed=config.seed
        )
    counts = _cglmp_counts(wrapped)
    p_xy = None if config.pvalue_settings == "estimated" else np.full((2, 2), 0.25)
    with _stage("pvalue", "uniform settings need counts in every CGLMP block"):
        try:
            pv = bell_pvalue(cglmp_inequality(sc.d), counts, p_xy)
            log10_p, p = pv.log10_p, pv.p
        except DegenerateScoreError:
            log10_p, p = 0.0, 1.0
    return {
        "I_d": quantity(I, "dimensionless", "CGLMP expression (local bound 2)"),
        "sigma": quantity(bs.sigma, "dimensionless", f"Poisson bootstrap std of I_d ({config.bootstrap_resamples} resamples)"),
        "log10_p": quantity(log10_p, "log10", "McDiarmid bound on the LHV p-value"),
        "p_bound": quantity(p, "probability", "McDiarmid bound on the LHV p-value"),
        "_P": P,
    }


def locality_analysis(P_cglmp, config: RunConfig) -> dict:
    """Critical visibility against white noise, after projecting onto no-signalling.

    Finite-count data signal slightly, and a signalling behaviour is never a
    local mixture for any ``v > 0``; the projection removes that artefact.
    """
    P_noise = uniform_behaviour(P_cglmp.d, 2, 2)
    shift = signaling_residual(P_cglmp)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoSignalingWarning)
        P_cglmp = project_no_signaling(P_cglmp)
    with _stage("lhv", "reduce settings or use lhv_method 'fw' above the vertex cap"):
        if config.lhv_method == "lp":
            res = lp_visibility(P_cglmp, P_noise)
        else:
            res = fw_visibility(P_cglmp, P_noise, tol=config.fw_tol, seed=config.seed)
    out = {
        "signaling_residual": quantity(shift, "probability", "largest no-signalling violation before projection"),
        "v_crit": quantity(res.v_crit, "visibility", "critical white-noise visibility"),
        "v_lower": quantity(res.v_lower, "visibility", "certified local at or below"),
        "v_upper": quantity(res.v_upper, "visibility", "certified nonlocal above"),
        "method": res.method,
        "heuristic": res.heuristic,
    }
    if res.certificate is not None:
        ineq = res.certificate
        out["certificate_local_bound"] = quantity(ineq.local_bound, "dimensionless", "exact local bound of the extracted inequality")
        out["certificate_value"] = quantity(ineq.value(P_cglmp), "dimensionless", "value of the extracted inequality on the target")
        out["_certificate"] = ineq
    return out


def _certificate_rows(ineq) -> list[list]:
    c = ineq.coefficients
    d = c.shape[0]
    return [[x, y, a, b, float(c[a, b, x, y])] for x in range(2) for y in range(2) for a in range(d) for b in range(d)]


def _strip_private(d: dict) -> dict:
    return {k: v for k, v in d.items() if not k.startswith("_")}


def run_bell(config: RunConfig) -> dict:
    """I_d of wrapped counts (``input`` = wrapped CSV) or theory for the configured state."""
    if config.input is not None:
        try:
            wrapped = read_wrapped(config.input)
        except (FileNotFoundError, ValueError) as exc:
            raise StageError("ingest", exc, "input must be a wrapped CSV with its sidecar") from exc
        res = _strip_private(bell_analysis(wrapped, config))
        report = _report("bell", config, scenario=_scenario_dict(wrapped.scenario), **res)
    else:
        with _stage("bell"):
            state = resolve_state(config)
            sc = config.scenario
            I = theoretical_cglmp(config.d, state)
            I_bin = binned_cglmp(sc, state, order=config.quadrature_order)
        report = _report(
            "bell",
            config,
            scenario=_scenario_dict(sc),
            I_d=quantity(I, "dimensionless", "CGLMP expression at exact phases"),
            I_d_binned=quantity(I_bin, "dimensionless", "CGLMP expression of the bin-integrated distribution"),
            noise_tolerance=quantity(noise_tolerance(I).fraction, "fraction", "white-noise tolerance 1 - 2/I_d"),
        )
    return _finish(config, report)


def run_pvalue(config: RunConfig) -> dict:
    if config.input is None:
        raise StageError("ingest", ValueError("pvalue needs a wrapped counts file"), "set 'input'")
    try:
        wrapped = read_wrapped(config.input)
    except (FileNotFoundError, ValueError) as exc:
        raise StageError("ingest", exc, "input must be a wrapped CSV with its sidecar") from exc
    res = bell_analysis(wrapped, config)
    report = _report(
        "pvalue",
        config,
        scenario=_scenario_dict(wrapped.scenario),
        I_d=res["I_d"],
        log10_p=res["log10_p"],
        p_bound=res["p_bound"],
        settings_probability=config.pvalue_settings,
    )
    return _finish(config, report)


def run_lhv(config: RunConfig) -> dict:
    """Critical visibility of wrapped data (``input``) or of the ideal state at the CGLMP phases."""
    if config.input is not None:
        try:
            wrapped = read_wrapped(config.input)
        except (FileNotFoundError, ValueError) as exc:
            raise StageError("ingest", exc, "input must be a wrapped CSV with its sidecar") from exc
        sc = wrapped.scenario
        with _stage("normalize"):
            P = cglmp_probabilities(normalize(wrapped, sc), sc)
        source = "wrapped counts"
    else:
        with _stage("lhv"):
            P = cglmp_phase_probabilities(resolve_state(config), config.d)
        sc = config.scenario
        source = "ideal state at CGLMP phases"
    res = locality_analysis(P, config)
    artifacts = {}
    if "_certificate" in res:
        artifacts["certificate"] = _table(config, "certificate", ["x", "y", "a", "b", "coefficient"], _certificate_rows(res["_certificate"]))
    report = _report("lhv", config, scenario={"d": sc.d}, source=source, lhv=_strip_private(res), artifacts=artifacts)
    return _finish(config, report)


# -- pipeline and sweep --------------------------------------------------------


def run_pipeline(config: RunConfig) -> dict:
    """simulate (or ingest) -> fit -> wrap -> normalise -> I_d -> bootstrap -> p-value [-> v_crit]."""
    if config.input is not None:
        jsi = load_input(config)
        source = {"kind": "ingested", "path": Path(config.input).name}
        scenario = None
    else:
        with _stage("simulate", "check scenario, noise and grid settings"):
            jsi = simulate_record(config)
        source = {"kind": "simulated", "seed": config.seed}
        scenario = config.scenario
    scenario, model, result, cal_info = calibrate_and_wrap(jsi, config, scenario)
    analysis = bell_analysis(result.wrapped, config)
    P = analysis.pop("_P")
    P_cglmp = cglmp_probabilities(P, scenario)

    artifacts = {}
    header, rows = _matrix_rows(np.asarray(jsi.counts))
    artifacts["jsi_heatmap"] = _table(config, "jsi_heatmap", header, rows)
    header, rows = _matrix_rows(result.wrapped.values)
    artifacts["wrapped_heatmap"] = _table(config, "wrapped_heatmap", header, rows)
    if config.input is None:
        with _stage("theory"):
            ideal = cglmp_phase_probabilities(resolve_state(config), scenario.d).tensor
    else:
        ideal = None
    bars = []
    for x in range(2):
        for y in range(2):
            for a in range(scenario.d):
                for b in range(scenario.d):
                    theory = "" if ideal is None else float(ideal[a, b, x, y])
                    bars.append([x, y, a, b, float(P_cglmp.tensor[a, b, x, y]), theory])
    artifacts["cglmp_bars"] = _table(config, "cglmp_bars", ["x", "y", "a", "b", "probability", "theory_visibility_1"], bars)

    body = {
        "scenario": _scenario_dict(scenario),
        "source": source,
        "calibration": cal_info,
        "wrap": _wrap_info(result),
        **analysis,
    }
    if config.input is None:
        with _stage("theory"):
            body["I_d_binned_theory"] = quantity(
                config.visibility * binned_cglmp(scenario, resolve_state(config), order=config.quadrature_order),
                "dimensionless",
                "visibility x CGLMP value of the bin-integrated ideal distribution",
            )
    if config.lhv:
        res = locality_analysis(P_cglmp, config)
        if "_certificate" in res:
            artifacts["certificate"] = _table(config, "certificate", ["x", "y", "a", "b", "coefficient"], _certificate_rows(res["_certificate"]))
        body["lhv"] = _strip_private(res)
    body["artifacts"] = artifacts
    return _finish(config, _report("pipeline", config, **body))


SWEEP_COLUMNS = ["d", "I_d_max_entangled", "I_d_optimal", "tolerance_multi", "tolerance_binarised_reference", "v_crit_LP"]


def sweep_rows(config: RunConfig) -> list[list]:
    if config.sweep_lp and config.sweep_d_max > LP_SWEEP_MAX_D:
        raise StageError(
            "sweep",
            ValueError(f"LP sweep limited to d <= {LP_SWEEP_MAX_D} (vertex matrix size)"),
            "lower sweep_d_max or disable sweep_lp",
        )
    rows = []
    for d in range(config.sweep_d_min, config.sweep_d_max + 1):
        with _stage("sweep", f"failed at d={d}"):
            I_max = theoretical_cglmp(d)
            state, I_opt = optimize_state(d)
            tol = noise_tolerance(I_opt).fraction
            ref = binarised_reference(d)["binarised"]
            v_lp = ""
            if config.sweep_lp:
                v_lp = lp_visibility(cglmp_phase_probabilities(state, d)).v_crit
        rows.append([d, I_max, I_opt, tol, "" if ref is None else ref, v_lp])
    return rows


def run_sweep(config: RunConfig) -> dict:
    rows = sweep_rows(config)
    table = _table(config, "sweep", SWEEP_COLUMNS, rows)
    report = _report(
        "sweep",
        config,
        d_range=[config.sweep_d_min, config.sweep_d_max],
        columns={
            "I_d_max_entangled": "CGLMP value, maximally entangled state (dimensionless)",
            "I_d_optimal": "CGLMP value, optimal Schmidt coefficients (dimensionless)",
            "tolerance_multi": "white-noise tolerance 1 - 2/I_d_optimal (fraction)",
            "tolerance_binarised_reference": "binarised-measurement tolerance, quoted reference (fraction; blank if unavailable)",
            "v_crit_LP": "LP critical visibility of the optimal state (blank unless sweep_lp)",
        },
        binarised_reference_source=binarised_reference(8)["source"],
        artifacts={"table": table},
    )
    return _finish(config, report)


COMMANDS = {
    "simulate": run_simulate,
    "ingest": run_ingest,
    "wrap": run_wrap,
    "bell": run_bell,
    "lhv": run_lhv,
    "pvalue": run_pvalue,
    "pipeline": run_pipeline,
    "sweep": run_sweep,
}
