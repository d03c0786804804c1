"""Command-line workflow: simulate, fit, evaluate, report.

Four subcommands move artifacts through a directory pipeline:

- ``simulate --model TAG --spec cfg --out dir`` writes data matrices,
  ground-truth arrays, and a ``meta.cfg`` describing the run;
- ``fit --model TAG --data dir --config cfg --out dir`` reads the data,
  runs the matching fitter, and writes fitted arrays plus
  ``fit_report.json``;
- ``evaluate --truth dir --fit dir --out report.json`` scores the fit
  against the truth and writes the final report;
- ``report --in report.json --format {text|json|csv}`` renders it.

Exit codes: 0 success, 1 usage error, 2 data error, 3 solver failure.
Diagnostics go to standard error.
"""

import argparse
import math
import pathlib
import sys
import time

import numpy as np

from ._rng import substream
from .brsa import convolve_design, fit_brsa, similarity_from_cov
from .config import parse_config
from .drd import fit_drd
from .errors import (BadSpec, ConfigError, DataFormatError, DegenerateNoise,
                     DimensionMismatch, NeuropgmError, NonPositiveWidth,
                     NotSPD, RankDeficient, SolverFailure)
from .htfa import VoxelGrid, factor_matrix, fit_htfa
from .matio import read_matrix, write_events, write_matrix
from .matnormal import fit_dpsrm, fit_mnsrm
from .metrics import aligned_recovery_score, matched_center_error, pearson
from .report import FitReport, read_report, render_report, write_report
from .simulate import (SimSpec, simulate_brsa, simulate_drd, simulate_htfa,
                       simulate_matnormal, simulate_srm)
from .srm import fit_srm_probabilistic

MODEL_TAGS = ("srm", "htfa", "drd", "brsa", "mnsrm", "dpsrm")

_DATA_ERRORS = (OSError, DataFormatError, ConfigError, BadSpec,
                DimensionMismatch, RankDeficient)
_SOLVER_ERRORS = (SolverFailure, NotSPD, DegenerateNoise, NonPositiveWidth)

_BASE_SIM = ("m_subjects", "t_timepoints", "v_voxels", "k_factors",
             "snr", "seed", "noise_var")
_SIM_KEYS = {
    "srm": _BASE_SIM,
    "htfa": _BASE_SIM + ("grid", "center_sep", "width0"),
    "drd": _BASE_SIM + ("mode", "block_count", "block_frac",
                        "u_low", "u_high", "b", "rho", "ell"),
    "brsa": _BASE_SIM + ("n_events", "event_duration", "n_nuisance",
                         "nuisance_scale", "sigma_spread"),
    "mnsrm": _BASE_SIM + ("phi", "w_mode"),
    "dpsrm": _BASE_SIM + ("phi",),
}
_FIT_KEYS = {
    "srm": ("k", "max_iters", "tol", "seed"),
    "htfa": ("k", "max_iters", "tol", "seed", "max_nfev"),
    "drd": ("outer_maxfev", "inner_first", "inner_warm"),
    "brsa": ("n_nuisance", "rounds", "max_iters", "tol"),
    "mnsrm": ("k", "max_iters", "tol", "seed"),
    "dpsrm": ("k", "max_iters", "tol", "seed"),
}
_META_KEYS = ("model", "seed", "m_subjects", "t_timepoints", "v_voxels",
              "k_factors", "snr", "grid", "noise_sigma", "phi")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose usage failures exit with code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser():
    parser = _Parser(prog="neuropgm",
                     description="simulate / fit / evaluate / report "
                                 "pipeline for the model library")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="sample a dataset to a directory")
    p_sim.add_argument("--model", required=True, choices=MODEL_TAGS)
    p_sim.add_argument("--spec", required=True, help="config file")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit a model to a data directory")
    p_fit.add_argument("--model", required=True, choices=MODEL_TAGS)
    p_fit.add_argument("--data", required=True, help="data directory")
    p_fit.add_argument("--config", required=True, help="config file")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.set_defaults(func=_cmd_fit)

    p_eval = sub.add_parser("evaluate", help="score a fit against truth")
    p_eval.add_argument("--truth", required=True, help="simulate output dir")
    p_eval.add_argument("--fit", required=True, help="fit output dir")
    p_eval.add_argument("--out", required=True, help="report JSON path")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_rep = sub.add_parser("report", help="render a report file")
    p_rep.add_argument("--in", dest="in_path", required=True)
    p_rep.add_argument("--format", choices=("text", "json", "csv"),
                       default="text")
    p_rep.set_defaults(func=_cmd_report)
    return parser


def _format_meta_value(val):
    if isinstance(val, (list, tuple)):
        return ",".join(_format_meta_value(v) for v in val)
    if isinstance(val, float):
        return repr(val)
    return str(val)


def _write_meta(path, meta):
    lines = ["[meta]"]
    lines += [f"{key} = {_format_meta_value(val)}" for key, val in
              meta.items()]
    pathlib.Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_meta(data_dir):
    cfg = parse_config(pathlib.Path(data_dir) / "meta.cfg",
                       schema={"meta": _META_KEYS})
    return cfg.get("meta", {})


def _read_subjects(data_dir, m_subjects):
    return [read_matrix(pathlib.Path(data_dir) / f"data_m{i}.f64mat")
            for i in range(int(m_subjects))]


def _brsa_schedule(spec, n_events, duration):
    """Seeded event schedule with round-robin condition labels."""
    t, k = spec.t_timepoints, spec.k_factors
    n = int(n_events) if n_events is not None else 4 * k
    if n < k:
        raise BadSpec(f"need at least one event per condition "
                      f"(n_events={n} < k_factors={k})")
    dur = float(duration)
    high = t - dur - 1.0
    if high <= 0:
        raise BadSpec("t_timepoints too small for the event duration")
    onsets = np.sort(substream(spec.seed, "cli.brsa.onsets")
                     .uniform(0.0, high, size=n))
    events = [(float(onset), dur, 1.0, f"c{i % k:02d}")
              for i, onset in enumerate(onsets)]
    return events, convolve_design(events, t)


def _default_pattern_cov(k):
    """Two correlated condition blocks over mildly distinct variances."""
    corr = np.eye(k)
    half = k // 2
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if i < half and j < half:
                corr[i, j] = 0.5
            elif i >= half and j >= half:
                corr[i, j] = 0.25
    sd = np.sqrt(np.linspace(0.8, 1.2, k))
    return corr * np.outer(sd, sd)


def _cmd_simulate(args):
    model = args.model
    cfg = parse_config(args.spec, schema={"simulate": _SIM_KEYS[model]})
    sim = dict(cfg.get("simulate", {}))
    grid_shape = sim.pop("grid", None)
    n_events = sim.pop("n_events", None)
    event_duration = sim.pop("event_duration", 1.5)
    base = {key: sim.pop(key) for key in
            ("m_subjects", "t_timepoints", "v_voxels", "k_factors",
             "snr", "seed") if key in sim}
    spec = SimSpec(model=model, extras=sim, **base)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"model": model, "seed": spec.seed,
            "m_subjects": spec.m_subjects,
            "t_timepoints": spec.t_timepoints,
            "v_voxels": spec.v_voxels, "k_factors": spec.k_factors,
            "snr": float(spec.snr)}

    if model == "srm":
        datasets, truth = simulate_srm(spec)
        for i, x in enumerate(datasets):
            write_matrix(out / f"data_m{i}.f64mat", x)
        write_matrix(out / "truth_s.f64mat", truth.latents["S"])
    elif model in ("mnsrm", "dpsrm"):
        datasets, truth = simulate_matnormal(spec)
        for i, x in enumerate(datasets):
            write_matrix(out / f"data_m{i}.f64mat", x)
        write_matrix(out / "truth_s.f64mat", truth.latents["S"])
        meta["phi"] = float(truth.noise["phi"])
    elif model == "htfa":
        if grid_shape is None:
            raise BadSpec("htfa simulation needs grid = nx,ny,nz")
        shape = tuple(int(v) for v in np.atleast_1d(grid_shape))
        grid = VoxelGrid.regular(shape)
        datasets, truth = simulate_htfa(spec, grid)
        for i, x in enumerate(datasets):
            write_matrix(out / f"data_m{i}.f64mat", x)
        write_matrix(out / "truth_centers.f64mat", truth.latents["centers"])
        meta["grid"] = shape
        meta["noise_sigma"] = math.sqrt(
            float(np.mean(truth.noise["noise_var"])))
    elif model == "drd":
        points = np.arange(spec.v_voxels, dtype=np.float64)[:, None]
        x, y, truth = simulate_drd(spec, points)
        write_matrix(out / "design_x.f64mat", x)
        write_matrix(out / "targets_y.f64mat", y)
        write_matrix(out / "points.f64mat", points)
        write_matrix(out / "truth_w.f64mat", truth.latents["w"])
        write_matrix(out / "truth_u.f64mat", truth.latents["u"])
    elif model == "brsa":
        events, design = _brsa_schedule(spec, n_events, event_duration)
        x, truth = simulate_brsa(spec, design.matrix,
                                 _default_pattern_cov(spec.k_factors))
        write_matrix(out / "data_m0.f64mat", x)
        write_matrix(out / "design.f64mat", design.matrix)
        write_events(out / "events.csv", events)
        sim_true, _ = similarity_from_cov(truth.latents["u_empirical"])
        write_matrix(out / "truth_similarity.f64mat", sim_true)
    _write_meta(out / "meta.cfg", meta)
    print(f"simulated {model} -> {out}", file=sys.stderr)
    return 0


def _cmd_fit(args):
    model = args.model
    data_dir = pathlib.Path(args.data)
    meta = _read_meta(data_dir)
    if meta.get("model") != model:
        raise DataFormatError(
            f"data directory holds model {meta.get('model')!r}, "
            f"not {model!r}")
    cfg = parse_config(args.config, schema={"fit": _FIT_KEYS[model]})
    fit_cfg = dict(cfg.get("fit", {}))
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k = int(fit_cfg.get("k", meta.get("k_factors", 0)))
    seed = int(fit_cfg.get("seed", 0))

    t0 = time.monotonic()
    if model == "srm":
        datasets = _read_subjects(data_dir, meta["m_subjects"])
        max_iters = int(fit_cfg.get("max_iters", 200))
        fitted, trace = fit_srm_probabilistic(
            datasets, k, max_iters=max_iters,
            tol=float(fit_cfg.get("tol", 1e-6)), seed=seed)
        report = FitReport(model=model, trace=trace,
                           converged=len(trace) - 1 < max_iters,
                           wall_time=time.monotonic() - t0, seed=seed)
        write_matrix(out / "fitted_s.f64mat", fitted.s_hat)
    elif model in ("mnsrm", "dpsrm"):
        datasets = _read_subjects(data_dir, meta["m_subjects"])
        fit_fn = fit_mnsrm if model == "mnsrm" else fit_dpsrm
        default_iters = 50 if model == "mnsrm" else 200
        default_tol = 1e-6 if model == "mnsrm" else 1e-9
        fitted = fit_fn(datasets, k,
                        max_iters=int(fit_cfg.get("max_iters",
                                                  default_iters)),
                        tol=float(fit_cfg.get("tol", default_tol)),
                        seed=seed)
        report = FitReport(model=model, trace=fitted.loglik_trace,
                           converged=fitted.converged,
                           wall_time=time.monotonic() - t0, seed=seed)
        write_matrix(out / "fitted_s.f64mat", fitted.s)
    elif model == "htfa":
        datasets = _read_subjects(data_dir, meta["m_subjects"])
        grid = VoxelGrid.regular(tuple(int(v) for v in
                                       np.atleast_1d(meta["grid"])))
        template, subjects, report = fit_htfa(
            datasets, grid, k,
            max_iters=int(fit_cfg.get("max_iters", 20)),
            tol=float(fit_cfg.get("tol", 1e-4)), seed=seed,
            max_nfev=int(fit_cfg.get("max_nfev", 50)))
        write_matrix(out / "fitted_centers.f64mat", template.centers)
        write_matrix(out / "fitted_widths.f64mat", template.widths)
        for i, sub in enumerate(subjects):
            f_m = factor_matrix(sub.centers, sub.widths, grid.positions)
            write_matrix(out / f"recon_m{i}.f64mat", sub.W @ f_m)
    elif model == "drd":
        x = read_matrix(data_dir / "design_x.f64mat")
        y = read_matrix(data_dir / "targets_y.f64mat")
        points = read_matrix(data_dir / "points.f64mat")
        fitted = fit_drd(x, y, points,
                         outer_maxfev=int(fit_cfg.get("outer_maxfev", 26)),
                         inner_first=int(fit_cfg.get("inner_first", 12)),
                         inner_warm=int(fit_cfg.get("inner_warm", 4)))
        report = FitReport(model=model, trace=fitted.trace,
                           converged=fitted.converged,
                           wall_time=time.monotonic() - t0, seed=0)
        write_matrix(out / "fitted_w.f64mat", fitted.w)
        write_matrix(out / "fitted_u.f64mat", fitted.u)
    elif model == "brsa":
        x = read_matrix(data_dir / "data_m0.f64mat")
        design = read_matrix(data_dir / "design.f64mat")
        fitted = fit_brsa(x, design,
                          n_nuisance=int(fit_cfg.get("n_nuisance", 0)),
                          rounds=int(fit_cfg.get("rounds", 3)),
                          max_iters=int(fit_cfg.get("max_iters", 80)),
                          tol=float(fit_cfg.get("tol", 1e-9)))
        report = FitReport(model=model, trace=fitted.loglik_trace,
                           converged=fitted.converged,
                           wall_time=time.monotonic() - t0, seed=0)
        write_matrix(out / "fitted_similarity.f64mat", fitted.similarity)
    write_report(out / "fit_report.json", report)
    print(f"fit {model} -> {out}", file=sys.stderr)
    return 0


def _cmd_evaluate(args):
    truth_dir = pathlib.Path(args.truth)
    fit_dir = pathlib.Path(args.fit)
    meta = _read_meta(truth_dir)
    model = meta.get("model")
    base = read_report(fit_dir / "fit_report.json")
    if base.model != model:
        raise DataFormatError(f"fit report is for model {base.model!r}, "
                              f"truth directory holds {model!r}")
    metrics = dict(base.metrics)
    if model in ("srm", "mnsrm", "dpsrm"):
        s_true = read_matrix(truth_dir / "truth_s.f64mat")
        s_fit = read_matrix(fit_dir / "fitted_s.f64mat")
        metrics["aligned_recovery_score"] = aligned_recovery_score(
            s_true, s_fit)
    elif model == "htfa":
        c_true = read_matrix(truth_dir / "truth_centers.f64mat")
        c_fit = read_matrix(fit_dir / "fitted_centers.f64mat")
        metrics["matched_center_error"] = matched_center_error(c_true, c_fit)
        sigma = float(meta["noise_sigma"])
        if sigma <= 0:
            raise DataFormatError("meta noise_sigma must be > 0 to "
                                  "normalize the reconstruction error")
        sq_sum = 0.0
        count = 0
        for i in range(int(meta["m_subjects"])):
            x = read_matrix(truth_dir / f"data_m{i}.f64mat")
            recon = read_matrix(fit_dir / f"recon_m{i}.f64mat")
            if x.shape != recon.shape:
                raise DimensionMismatch(
                    f"recon_m{i} shape {recon.shape} != data {x.shape}")
            sq_sum += float(np.sum((x - recon) ** 2))
            count += x.size
        metrics["recon_rmse_over_sigma"] = math.sqrt(sq_sum / count) / sigma
    elif model == "drd":
        w_true = read_matrix(truth_dir / "truth_w.f64mat")
        w_fit = read_matrix(fit_dir / "fitted_w.f64mat")
        metrics["w_correlation"] = pearson(w_true, w_fit)
    elif model == "brsa":
        sim_true = read_matrix(truth_dir / "truth_similarity.f64mat")
        sim_fit = read_matrix(fit_dir / "fitted_similarity.f64mat")
        if sim_true.shape != sim_fit.shape:
            raise DimensionMismatch(
                f"similarity shapes differ: {sim_true.shape} vs "
                f"{sim_fit.shape}")
        off = ~np.eye(sim_true.shape[0], dtype=bool)
        diff = (sim_fit - sim_true)[off]
        metrics["similarity_rmse_offdiag"] = \
            float(np.sqrt(np.mean(diff ** 2))) if diff.size else 0.0
    else:
        raise DataFormatError(f"unknown model tag {model!r} in meta.cfg")
    final = FitReport(model=base.model, trace=base.trace,
                      converged=base.converged, wall_time=base.wall_time,
                      seed=base.seed, metrics=metrics)
    write_report(args.out, final)
    print(f"evaluated {model} -> {args.out}", file=sys.stderr)
    return 0


def _cmd_report(args):
    rep = read_report(args.in_path)
    sys.stdout.write(render_report(rep, args.format))
    return 0


def cli_main(argv=None):
    """Run the pipeline; returns the process exit code."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return int(args.func(args))
    except _SOLVER_ERRORS as exc:
        print(f"neuropgm: solver failure: {exc}", file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print(f"neuropgm: data error: {exc}", file=sys.stderr)
        return 2
    except NeuropgmError as exc:
        print(f"neuropgm: data error: {exc}", file=sys.stderr)
        return 2


def main():
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
