"""Batch command-line front end.

Subcommands: generate, calibrate, decompose, train, sweep, diagnose, report,
verify. Every command operates on one run directory (--out) driven by one
JSON config (--config); emitted files are recorded in manifest.json with
checksums. Exit codes: 0 success, 2 configuration error, 3 numerical failure
(a state dump path is printed).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
import traceback
from pathlib import Path

import numpy as np

from . import calibrate as calibration_mod
from . import decomp, mle, report, surrogate, uq
from .config import (ConfigError, Manifest, RunConfig, apply_overrides,
                     load_config, parse_config, run_lock)
from .integrate import (generate_synthetic, read_series_csv, solve_ivp,
                        write_experiment_files, write_series_csv)
from .linalg import NumericalError
from .stoich import rhs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3


def _fmt(x) -> str:
    return repr(float(x))


def _p_header(m: int) -> list[str]:
    return [f"p_{j + 1}" for j in range(m)]


# ---------------------------------------------------------------------------
# data plumbing between commands


def _experiment_names(cfg: RunConfig) -> list[str]:
    return [e["name"] for e in cfg.experiments]


def _read_observations(cfg: RunConfig, out: Path):
    """Observed bulk and latent-signal blocks for every experiment."""
    blocks = []
    for name in _experiment_names(cfg):
        bulk_path = out / f"{name}_observed_bulk.csv"
        sig_path = out / f"{name}_latent_signals.csv"
        if not bulk_path.exists():
            raise ConfigError(f"{bulk_path} not found; run `generate` first")
        t, bulk, _ = read_series_csv(bulk_path)
        if cfg.network.n_latent > 0:
            if not sig_path.exists():
                raise ConfigError(f"{sig_path} not found; run `generate` first")
            _, sig, _ = read_series_csv(sig_path)
        else:
            sig = np.zeros((t.shape[0], 0))
        blocks.append((t, bulk, sig))
    return blocks


def _assemble_training_data(cfg: RunConfig, out: Path):
    """Full observed state matrices: bulk columns from the observation files,
    latent columns from the calibrated coverages."""
    net = cfg.network
    blocks = _read_observations(cfg, out)
    gamma = None
    times, observations, signals = [], [], []
    for name, (t, bulk, sig) in zip(_experiment_names(cfg), blocks):
        x = np.zeros((t.shape[0], net.n_species))
        x[:, net.obs_idx] = bulk
        if net.n_latent > 0:
            cov_path = out / f"{name}_coverages.csv"
            if not cov_path.exists():
                raise ConfigError(f"{cov_path} not found; run `calibrate` first")
            _, coverages, _ = read_series_csv(cov_path)
            x[:, net.lat_idx] = coverages
        times.append(t)
        observations.append(x)
        signals.append((t, bulk, sig))
    if net.n_latent > 0:
        gamma_path = out / "gamma.csv"
        if gamma_path.exists():
            gamma = _read_gamma(gamma_path)
    return mle.TrainingData(times=times, observations=observations), signals, gamma


def _read_gamma(path: Path) -> np.ndarray:
    lines = Path(path).read_text().strip().splitlines()
    return np.array([float(ln.split(",")[1]) for ln in lines[1:]])


def _bases(cfg: RunConfig):
    return decomp.build_bases(cfg.network)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: RunConfig, out: Path, manifest: Manifest) -> None:
    t0 = time.perf_counter()
    p_true = cfg.p_true
    if p_true is None:
        raise ConfigError("generate requires p_true in the config")
    files = []
    for spec in cfg.experiment_specs():
        clean, bulk, signals = generate_synthetic(spec, cfg.network, p_true)
        files += write_experiment_files(out, spec, cfg.network, clean, bulk,
                                        signals)
    manifest.record_command("generate", time.perf_counter() - t0, files)


def cmd_calibrate(cfg: RunConfig, out: Path, manifest: Manifest) -> None:
    t0 = time.perf_counter()
    net = cfg.network
    if net.n_latent == 0:
        raise ConfigError("network has no latent species to calibrate")
    bases = _bases(cfg)
    blocks = _read_observations(cfg, out)
    problems = [calibration_mod.CalibrationProblem(
        observed_bulk=bulk, latent_signals=sig, bases=bases,
        eigen_cutoff=cfg.calibration["eigen_cutoff"],
        relative_cutoff=cfg.calibration["relative_cutoff"])
        for _, bulk, sig in blocks]
    result = calibration_mod.solve_gamma(problems)

    files = []
    lat_names = [net.species[i] for i in net.lat_idx]
    gamma_path = out / "gamma.csv"
    gamma_path.write_text(
        "species,gamma\n" + "".join(f"{s},{_fmt(g)}\n"
                                    for s, g in zip(lat_names, result.gamma)))
    files.append(gamma_path)
    for name, (t, _, sig) in zip(_experiment_names(cfg), blocks):
        coverages = calibration_mod.apply_calibration(sig, result.gamma)
        path = out / f"{name}_coverages.csv"
        write_series_csv(path, t, coverages, lat_names)
        files.append(path)
    diag_path = out / "calibration_diagnostics.json"
    diag_path.write_text(json.dumps(result.diagnostics(), indent=1) + "\n")
    files.append(diag_path)
    manifest.record_command("calibrate", time.perf_counter() - t0, files)


def cmd_decompose(cfg: RunConfig, out: Path, manifest: Manifest) -> None:
    t0 = time.perf_counter()
    bases = _bases(cfg)
    path = out / "bases.json"
    path.write_text(bases.to_debug_json() + "\n")
    manifest.record_command("decompose", time.perf_counter() - t0, [path],
                            extra={"rank": bases.rank,
                                   "null_dim": bases.null_dim})


def _write_metrics(path: Path, rows: list[list], m: int) -> None:
    header = ["epoch", "ell_t", "ell_x", "ell_dx"] + _p_header(m)
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join([str(int(row[0]))] + [_fmt(v) for v in row[1:]]))
    path.write_text("\n".join(lines) + "\n")


def _emit_model_curves(cfg, out, model, data) -> list[Path]:
    """SA states, integrated-model overlay and derivative parity data, one
    file set per experiment."""
    net = cfg.network
    files = []
    for e, name in enumerate(_experiment_names(cfg)):
        t = data.times[e]
        x_sa, xdot_sa, _, _ = surrogate.sa_derivatives_batch(t, model, e)
        path = out / f"{name}_sa.csv"
        write_series_csv(path, t, x_sa, net.species)
        files.append(path)

        traj = solve_ivp(net, model.p, x_sa[0], t)
        path = out / f"{name}_model_integral.csv"
        write_series_csv(path, t, traj.states, net.species)
        files.append(path)

        f_model = rhs(x_sa, model.p, net)
        cols = [f"f:{s}" for s in net.species] + [f"sa:{s}" for s in net.species]
        path = out / f"{name}_parity_derivatives.csv"
        write_series_csv(path, t, np.hstack([f_model, xdot_sa]), cols)
        files.append(path)
    return files


def cmd_train(cfg: RunConfig, out: Path, manifest: Manifest) -> None:
    t0 = time.perf_counter()
    net = cfg.network
    bases = _bases(cfg)
    data, _, _ = _assemble_training_data(cfg, out)

    # resume from an existing checkpoint, continuing the epoch numbering
    model = None
    prior_rows: list[list] = []
    metrics_path = out / "metrics.csv"
    checkpoint_path = out / "checkpoint.json"
    if checkpoint_path.exists() and metrics_path.exists():
        model = surrogate.load_checkpoint(checkpoint_path, bases)
        mle.bind_network(model, net)
        lines = metrics_path.read_text().strip().splitlines()[1:]
        prior_rows = [[float(v) for v in ln.split(",")] for ln in lines]
    epoch_offset = int(prior_rows[-1][0]) if prior_rows else 0

    hidden = tuple(cfg.surrogate["hidden"])
    activations = tuple(cfg.surrogate["activations"])
    train_cfg = cfg.train
    if model is None:
        # surrogate weights come from the surrogate seed, the rest of the
        # training stream from the train seed
        train_cfg = mle.TrainConfig(**{**train_cfg.__dict__,
                                       "seed": cfg.surrogate["seed"]})

    if cfg.mode == "rkinn":
        model, hist = mle.train_rkinn(
            data, net, bases, train_cfg, model=model, hidden=hidden,
            activations=activations,
            trainable_nullspace=cfg.trainable_nullspace)
        rows = [[ep + epoch_offset, lt, lx, ldx, *p] for ep, lt, lx, ldx, p in
                zip(hist["epoch"], hist["ell_t"], hist["ell_x"],
                    hist["ell_dx"], hist["p"])]
    elif cfg.mode == "naive":
        model, hist = mle.train_naive(
            data, net, bases, train_cfg, alpha=cfg.naive_alpha,
            epochs=train_cfg.max_epochs, model=model, hidden=hidden,
            activations=activations)
        rows = [[ep + epoch_offset, ls, mx, mdx, *p] for ep, ls, mx, mdx, p in
                zip(hist["epoch"], hist["loss"], hist["mse_x"],
                    hist["mse_dx"], hist["p"])]
    else:
        raise ConfigError("train handles modes rkinn and naive; use `sweep`")

    _write_metrics(metrics_path, prior_rows + rows, net.n_reactions)
    surrogate.save_checkpoint(checkpoint_path, model)
    files = [metrics_path, checkpoint_path]
    files += _emit_model_curves(cfg, out, model, data)
    manifest.record_command(
        "train", time.perf_counter() - t0, files,
        extra={"mode": cfg.mode, "epochs_run": len(rows),
               "final_p": [float(v) for v in model.p],
               "z_N": model.z_N.tolist()})
    manifest.doc["final_p"] = [float(v) for v in model.p]
    manifest.doc["metrics_csv"] = "metrics.csv"


def cmd_sweep(cfg: RunConfig, out: Path, manifest: Manifest) -> None:
    t0 = time.perf_counter()
    net = cfg.network
    bases = _bases(cfg)
    data, _, _ = _assemble_training_data(cfg, out)
    schedule = np.geomspace(cfg.sweep["alpha_min"], cfg.sweep["alpha_max"],
                            int(cfg.sweep["n_alpha"]))
    records = mle.alpha_sweep(
        data, net, bases, cfg.train, alpha_schedule=schedule,
        epochs_per_alpha=int(cfg.sweep["epochs_per_alpha"]),
        hidden=tuple(cfg.surrogate["hidden"]),
        activations=tuple(cfg.surrogate["activations"]))
    path = out / "pareto.csv"
    header = ["direction", "alpha", "mse_x", "mse_dx"] + _p_header(net.n_reactions)
    lines = [",".join(header)]
    for rec in records:
        lines.append(",".join([rec["direction"], _fmt(rec["alpha"]),
                               _fmt(rec["mse_x"]), _fmt(rec["mse_dx"])]
                              + [_fmt(v) for v in rec["p"]]))
    path.write_text("\n".join(lines) + "\n")
    manifest.record_command("sweep", time.perf_counter() - t0, [path])


def cmd_diagnose(cfg: RunConfig, out: Path, manifest: Manifest) -> None:
    t0 = time.perf_counter()
    net = cfg.network
    bases = _bases(cfg)
    checkpoint_path = out / "checkpoint.json"
    if not checkpoint_path.exists():
        raise ConfigError(f"{checkpoint_path} not found; run `train` first")
    model = surrogate.load_checkpoint(checkpoint_path, bases)
    mle.bind_network(model, net)
    data, signals, gamma = _assemble_training_data(cfg, out)
    rep = uq.uq_report(model, data,
                       data_signals=signals if gamma is not None else None,
                       gamma=gamma)
    path = out / "uq.json"
    path.write_text(json.dumps(rep.to_dict(), indent=1) + "\n")
    manifest.record_command("diagnose", time.perf_counter() - t0, [path],
                            extra={"optimality_norms": rep.optimality_norms})
    manifest.doc["final_p_bars"] = rep.bars_p.tolist()
    manifest.doc["uq_json"] = "uq.json"


def cmd_report(cfg: RunConfig, out: Path, manifest: Manifest) -> None:
    t0 = time.perf_counter()
    net = cfg.network
    files = []

    metrics_path = out / "metrics.csv"
    pareto_path = out / "pareto.csv"
    if not metrics_path.exists() and not pareto_path.exists():
        raise ConfigError(f"nothing to report in {out}; run `train` or `sweep`")

    if metrics_path.exists():
        lines = metrics_path.read_text().strip().splitlines()
        rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
        series = [
            {"x": rows[:, 0], "y": rows[:, 1], "label": "total", "mode": "line"},
            {"x": rows[:, 0], "y": rows[:, 2], "label": "interpolation", "mode": "line"},
            {"x": rows[:, 0], "y": rows[:, 3], "label": "model", "mode": "line"},
        ]
        files.append(report.svg_plot(out / "loss_curves.svg", series,
                                     title="training losses", xlabel="epoch",
                                     ylabel="loss", ylog=True))

        p_final = rows[-1, 4:]
        p_true = cfg.p_true
        if p_true is not None:
            bars = None
            uq_path = out / "uq.json"
            if uq_path.exists():
                bars = np.asarray(json.loads(uq_path.read_text())["bars_p"])
            parity_csv = out / "parity_p.csv"
            hdr = "reaction,p_true,p_recovered" + (",bar_2sigma" if bars is not None else "")
            body = []
            for j, label in enumerate(net.reaction_labels):
                row = f"{label},{_fmt(p_true[j])},{_fmt(p_final[j])}"
                if bars is not None:
                    row += f",{_fmt(bars[j])}"
                body.append(row)
            parity_csv.write_text(hdr + "\n" + "\n".join(body) + "\n")
            files.append(parity_csv)
            series = [{"x": p_true, "y": p_final, "mode": "points",
                       "label": "ln k", "yerr": bars}]
            files.append(report.svg_plot(out / "parity_p.svg", series,
                                         title="kinetic parameters",
                                         xlabel="true ln k",
                                         ylabel="recovered ln k",
                                         identity_line=True))

    for name in _experiment_names(cfg):
        files += _render_experiment(cfg, out, name)

    if pareto_path.exists():
        lines = pareto_path.read_text().strip().splitlines()
        recs = [ln.split(",") for ln in lines[1:]]
        for direction, color in (("tighten", "#1f77b4"), ("relax", "#d62728")):
            pts = [(float(r[2]), float(r[3])) for r in recs if r[0] == direction]
            if not pts:
                continue
            xs = np.array([q[0] for q in pts])
            ys = np.array([q[1] for q in pts])
            series = [{"x": xs, "y": ys, "mode": "line", "label": direction,
                       "color": color}]
            files.append(report.svg_plot(out / f"pareto_{direction}.svg", series,
                                         title="interpolation vs model MSE",
                                         xlabel="MSE x", ylabel="MSE xdot",
                                         xlog=True, ylog=True))

    manifest.record_command("report", time.perf_counter() - t0, files)


def _render_experiment(cfg: RunConfig, out: Path, name: str) -> list[Path]:
    net = cfg.network
    files = []
    bulk_path = out / f"{name}_observed_bulk.csv"
    sa_path = out / f"{name}_sa.csv"
    if not (bulk_path.exists() and sa_path.exists()):
        return files
    t, bulk, bulk_cols = read_series_csv(bulk_path)
    _, x_sa, _ = read_series_csv(sa_path)
    series = []
    for k, col in enumerate(bulk_cols):
        color = report.PALETTE[k % len(report.PALETTE)]
        series.append({"x": t, "y": bulk[:, k], "mode": "points",
                       "label": col, "color": color})
    cov_path = out / f"{name}_coverages.csv"
    if cov_path.exists():
        _, coverages, cov_cols = read_series_csv(cov_path)
        for k, col in enumerate(cov_cols):
            color = report.PALETTE[(k + len(bulk_cols)) % len(report.PALETTE)]
            series.append({"x": t, "y": coverages[:, k], "mode": "points",
                           "label": col, "color": color})
    for k in range(net.n_species):
        series.append({"x": t, "y": x_sa[:, k], "mode": "dash",
                       "color": report.PALETTE[k % len(report.PALETTE)]})
    int_path = out / f"{name}_model_integral.csv"
    if int_path.exists():
        _, x_int, _ = read_series_csv(int_path)
        for k in range(net.n_species):
            series.append({"x": t, "y": x_int[:, k], "mode": "line",
                           "color": report.PALETTE[k % len(report.PALETTE)]})
    files.append(report.svg_plot(out / f"{name}_trajectories.svg", series,
                                 title=f"{name}: data, surrogate (dashed), "
                                       "integrated model (solid)",
                                 xlabel="t", ylabel="state", xlog=True))

    par_path = out / f"{name}_parity_derivatives.csv"
    if par_path.exists():
        _, vals, _ = read_series_csv(par_path)
        n = net.n_species
        f_model, xdot_sa = vals[:, :n], vals[:, n:]
        scale = np.std(f_model, axis=0).mean() or 1.0
        series = [{"x": (f_model / scale).ravel(),
                   "y": (xdot_sa / scale).ravel(),
                   "mode": "points", "label": "standardized"}]
        files.append(report.svg_plot(out / f"{name}_parity_derivatives.svg",
                                     series,
                                     title=f"{name}: model vs surrogate derivatives",
                                     xlabel="kinetic model (standardized)",
                                     ylabel="surrogate derivative (standardized)",
                                     identity_line=True))
    return files


def cmd_verify(cfg: RunConfig, out: Path, manifest: Manifest) -> None:
    bad = manifest.verify()
    if bad:
        for entry in bad:
            print(f"verify: {entry}", file=sys.stderr)
        raise NumericalError(f"{len(bad)} artifact(s) failed checksum verification")
    print(f"verify: {len(manifest.doc['files'])} files ok")


# ---------------------------------------------------------------------------
# entry point

_COMMANDS = {
    "generate": cmd_generate,
    "calibrate": cmd_calibrate,
    "decompose": cmd_decompose,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "diagnose": cmd_diagnose,
    "report": cmd_report,
    "verify": cmd_verify,
}

_READ_ONLY = {"verify"}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rkinn",
        description="inverse chemical kinetics with maximum-likelihood "
                    "kinetics-informed neural networks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="run configuration JSON")
        p.add_argument("--out", type=Path, required=True,
                       help="run directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override every seed in the config")
        p.add_argument("--epochs", type=int, default=None,
                       help="override train.max_epochs")
    return parser


def _resolve_config(args, manifest: Manifest) -> RunConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif manifest.doc.get("config"):
        cfg = parse_config(manifest.doc["config"], source="manifest")
    else:
        raise ConfigError("no --config given and the run directory has no "
                          "manifest with a config snapshot")
    if args.seed is not None or args.epochs is not None:
        cfg = apply_overrides(cfg, seed=args.seed, epochs=args.epochs)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    out = args.out
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = Manifest(out)
        cfg = _resolve_config(args, manifest)
        manifest.set_config(cfg)
        handler = _COMMANDS[args.command]
        if args.command in _READ_ONLY:
            handler(cfg, out, manifest)
        else:
            with run_lock(out):
                handler(cfg, out, manifest)
                manifest.save()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        dump = out / "failure_dump.json"
        try:
            dump.write_text(json.dumps({
                "error": str(exc),
                "command": args.command,
                "traceback": traceback.format_exc(),
            }, indent=1) + "\n")
        except OSError:
            dump = None
        print(f"numerical failure: {exc}", file=sys.stderr)
        if dump:
            print(f"state dump written to {dump}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
