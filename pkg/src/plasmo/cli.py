"""Command-line front end: plasmo <subcommand> [options].

Exit codes: 0 success, 2 argument errors, 1 runtime errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PlasmoError

COMMANDS = ("simulate", "tmm", "sweep", "train-mlp", "train-cnn", "predict", "explain", "plot")
MATERIAL_NAMES = {"au": "Au", "ag": "Ag"}
TARGETS = ("absorbed_power", "absorbed_flux")


# ---------------------------------------------------------------- argument types


def _material(text: str) -> str:
    try:
        return MATERIAL_NAMES[text.strip().lower()]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown material {text!r}; choose au or ag") from None


def _thickness(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 5.0 <= value <= 60.0:
        raise argparse.ArgumentTypeError(f"thickness must lie in [5, 60] nm, got {text}")
    return value


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _seed(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _wavelengths(text: str) -> tuple[float, ...]:
    """'400,500,600' or 'start:stop:count' (inclusive, evenly spaced)."""
    try:
        if ":" in text:
            start, stop, count = text.split(":")
            values = np.linspace(float(start), float(stop), int(count))
        else:
            values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'a,b,c' or 'start:stop:count', got {text!r}") from None
    if len(values) == 0 or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("wavelengths must be a non-empty list of positive values")
    return tuple(float(v) for v in values)


def _thickness_list(text: str) -> tuple[float, ...]:
    values = tuple(_thickness(v) for v in text.split(",") if v.strip())
    if not values:
        raise argparse.ArgumentTypeError("expected at least one thickness")
    return values


def _material_list(text: str) -> tuple[str, ...]:
    return tuple(_material(v) for v in text.split(",") if v.strip())


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="JSON file whose keys set defaults for this subcommand's options")
    g.add_argument("--out", type=Path, default=Path("plasmo-out"), help="output directory (default: plasmo-out)")
    g.add_argument("--seed", type=_seed, default=0, help="seed for every random choice (default: 0)")
    g.add_argument(
        "--workers",
        type=_positive_int,
        help="worker processes for sweeps (default: PLASMO_WORKERS, else the machine core count)",
    )
    g.add_argument("--profile", choices=("desk", "paper"), default="desk", help="FDTD resolution profile")

    parser = argparse.ArgumentParser(
        prog="plasmo", description="Plasmonic multilayer absorption: FDTD, transfer matrices and neural surrogates."
    )
    parser.add_argument("--version", action="version", version=f"plasmo {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    p = sub.add_parser("simulate", parents=[common], help="FDTD run of the absorber stack")
    p.add_argument("--material", type=_material, required=True, help="absorber metal: au or ag")
    p.add_argument("--thickness-nm", type=_thickness, required=True, help="metal thickness in nm, 5-60")
    p.add_argument("--wavelengths", type=_wavelengths, help="monitor wavelengths in nm (default: the profile's)")
    p.add_argument("--resolution", type=float, help="override the profile's cells per micrometre")

    p = sub.add_parser("tmm", parents=[common], help="transfer-matrix spectrum of the absorber stack")
    p.add_argument("--material", type=_material, required=True, help="absorber metal: au or ag")
    p.add_argument("--thickness-nm", type=_thickness, required=True, help="metal thickness in nm, 5-60")
    p.add_argument("--wavelengths", type=_wavelengths, default=_wavelengths("300:1500:25"), help="wavelengths in nm")

    p = sub.add_parser("sweep", parents=[common], help="parameter sweep into a dataset directory")
    p.add_argument("--engine", choices=("tmm", "fdtd"), default="tmm", help="simulation engine (default: tmm)")
    p.add_argument("--materials", type=_material_list, default=("Au", "Ag"), help="comma-separated metals")
    p.add_argument("--thicknesses", type=_thickness_list, default=(10.0, 20.0, 30.0, 40.0, 50.0), help="nm, comma-separated")
    p.add_argument("--wavelengths", type=_wavelengths, default=_wavelengths("300:1500:25"), help="wavelengths in nm")

    for name, what in (("train-mlp", "spectral MLP"), ("train-cnn", "absorption-map CNN")):
        p = sub.add_parser(name, parents=[common], help=f"train the {what} on a sweep directory")
        p.add_argument("--data", type=Path, required=True, help="sweep output directory")
        p.add_argument("--max-epochs", type=_positive_int, help="override the maximum epoch count")
        p.add_argument("--batch-size", type=_positive_int, help="override the batch size")

    p = sub.add_parser("predict", parents=[common], help="surrogate predictions for new parameters")
    p.add_argument("--model", type=Path, required=True, help="model file from train-mlp or train-cnn")
    p.add_argument("--material", type=_material, required=True, help="absorber metal: au or ag")
    p.add_argument("--thickness-nm", type=_thickness, required=True, help="metal thickness in nm, 5-60")
    p.add_argument("--wavelengths", type=_wavelengths, default=_wavelengths("300:1500:25"), help="wavelengths in nm")

    p = sub.add_parser("explain", parents=[common], help="exact Shapley attributions of an MLP surrogate")
    p.add_argument("--model", type=Path, required=True, help="MLP model file")
    p.add_argument("--data", type=Path, required=True, help="sweep directory used as background and instances")
    p.add_argument("--target", choices=TARGETS, default="absorbed_power", help="which MLP output to explain")
    p.add_argument("--max-instances", type=_positive_int, default=250, help="explain at most this many records")

    p = sub.add_parser("plot", parents=[common], help="SVG/PGM figures from CSV outputs")
    p.add_argument("--kind", choices=("spectrum", "map", "losscurve", "shap-summary"), required=True)
    p.add_argument("--input", type=Path, required=True, help="CSV produced by another subcommand")
    p.add_argument("--name", help="output file stem (default: the input's stem)")
    return parser


def _apply_config(parser: argparse.ArgumentParser, command: str, config_path: str):
    """Install the --config JSON object as defaults of the chosen subcommand."""
    try:
        cfg = json.loads(Path(config_path).read_text())
    except OSError as exc:
        parser.error(f"argument --config: cannot read {config_path}: {exc.strerror}")
    except json.JSONDecodeError as exc:
        parser.error(f"argument --config: invalid JSON: {exc}")
    if not isinstance(cfg, dict):
        parser.error("argument --config: top level must be a JSON object")
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction)).choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.lstrip("-").replace("-", "_")
        if dest not in actions or dest in ("help", "config"):
            parser.error(f"argument --config: unknown key {key!r} for {command}")
        action = actions[dest]
        if action.type is not None and value is not None:
            text = ",".join(str(v) for v in value) if isinstance(value, list) else str(value)
            try:
                value = action.type(text)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                parser.error(f"argument --config: key {key!r}: {exc}")
        if action.choices is not None and value not in action.choices:
            parser.error(f"argument --config: key {key!r} must be one of {list(action.choices)}")
        defaults[dest] = value
        action.required = False
    sub.set_defaults(**defaults)


def _config_argument(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    command = next((a for a in argv if a in COMMANDS), None)
    return command, known.config


# ---------------------------------------------------------------- helpers


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _workers(args) -> int:
    if args.workers:
        return args.workers
    from .dataset import default_workers

    if os.environ.get("PLASMO_WORKERS"):
        return default_workers()
    return os.cpu_count() or 1


def _write_metadata(args, argv, out: Path, inputs=(), outputs=(), extra=None):
    from .materials import manifest_hash

    meta = {
        "command": args.command,
        "argv": list(argv),
        "plasmo_version": __version__,
        "numpy_version": np.__version__,
        "seed": args.seed,
        "profile": args.profile,
        "materials_manifest_hash": manifest_hash(),
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": sorted(str(p) for p in outputs),
        **(extra or {}),
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def _records_path(data: Path) -> Path:
    return data / "records.csv" if data.is_dir() else data


# ---------------------------------------------------------------- commands


def cmd_simulate(args, argv):
    from .fdtd import build_simulation, profile, run, run_metadata
    from .materials import paper_stack

    overrides = {}
    if args.wavelengths:
        overrides["monitor_wavelengths"] = args.wavelengths
        overrides["source_band"] = (min(args.wavelengths), max(args.wavelengths))
    if args.resolution:
        overrides["resolution"] = args.resolution
    config = profile(args.profile, **overrides)
    sim = build_simulation(paper_stack(args.material, args.thickness_nm), config)
    result, maps = run(sim, cache_dir=args.out / "cache")
    lines = ["wavelength_nm,absorbed_power,absorbed_flux,R,T,A"]
    for i, w in enumerate(result.wavelengths):
        row = (w, result.absorbed_power[i], result.absorbed_flux[i], result.R[i], result.T[i], result.A[i])
        lines.append(",".join("%.9e" % v for v in row))
    (args.out / "spectrum.csv").write_text("\n".join(lines) + "\n")
    (args.out / "maps").mkdir(exist_ok=True)
    outputs = [args.out / "spectrum.csv"]
    for m in maps:
        path = args.out / "maps" / f"absorption_{m.wavelength_vac:g}nm.csv"
        m.to_csv(path)
        outputs.append(path)
    meta = run_metadata(sim)
    meta.update(steps=result.steps, decayed=result.decayed, warnings=result.warnings)
    _write_metadata(args, argv, args.out, outputs=outputs, extra={"simulation": meta})
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)


def cmd_tmm(args, argv):
    from . import tmm
    from .materials import paper_stack

    stack = paper_stack(args.material, args.thickness_nm)
    path = args.out / "spectrum.csv"
    tmm.write_spectrum_csv(tmm.spectrum(stack, args.wavelengths), path)
    _write_metadata(args, argv, args.out, outputs=[path], extra={"stack": stack.to_dict()})


def cmd_sweep(args, argv):
    from .dataset import SweepPlan, run_sweep

    plan = SweepPlan(args.materials, args.thicknesses, args.wavelengths, args.engine, args.profile)
    manifest = run_sweep(plan, args.out, workers=_workers(args), seed=args.seed)
    _write_metadata(
        args,
        argv,
        args.out,
        outputs=[args.out / "records.csv", args.out / "manifest.json"],
        extra={"records": manifest.n_records, "new_cases": manifest.new_cases},
    )
    print(f"{manifest.n_records} records, {manifest.new_cases} new cases")


def _train_config(args, kind):
    from .surrogate import TrainConfig

    overrides = {"seed": args.seed}
    if args.max_epochs:
        overrides["max_epochs"] = args.max_epochs
    if args.batch_size:
        overrides["batch_size"] = args.batch_size
    return TrainConfig.mlp(**overrides) if kind == "mlp" else TrainConfig.cnn(**overrides)


def _save_training(args, argv, model, report, inputs):
    from .surrogate import save_model

    save_model(model, args.out / "model.bin")
    report.write_csv(args.out / "train_report.csv")
    summary = {
        "test_metrics": report.test_metrics,
        "best_epoch": report.best_epoch,
        "stop_epoch": report.stop_epoch,
        "lr_events": report.lr_events,
        "split_sizes": model.info["split_sizes"],
    }
    (args.out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    outputs = [args.out / n for n in ("model.bin", "train_report.csv", "metrics.json")]
    _write_metadata(args, argv, args.out, inputs=inputs, outputs=outputs, extra=summary)
    print(json.dumps(report.test_metrics, sort_keys=True))


def _training_records(path):
    from .dataset import impute_local_average, read_records

    records = read_records(path)
    if any(not r.valid for r in records):
        records = impute_local_average(records)
    return records


def cmd_train_mlp(args, argv):
    from .surrogate import train_mlp

    path = _records_path(args.data)
    model, report = train_mlp(_training_records(path), _train_config(args, "mlp"))
    _save_training(args, argv, model, report, [path])


def cmd_train_cnn(args, argv):
    from .dataset import SampleRecord, load_map_cache
    from .surrogate import train_cnn

    maps, mats, th, wl = load_map_cache(args.data)
    records = [SampleRecord(str(m), float(t), float(w), np.nan, np.nan) for m, t, w in zip(mats, th, wl)]
    model, report = train_cnn(records, maps, _train_config(args, "cnn"))
    _save_training(args, argv, model, report, [args.data / "maps_64x48.npz"])


def cmd_predict(args, argv):
    from .surrogate import load_model

    model = load_model(args.model)
    wl = np.array(args.wavelengths)
    pred = model.predict(np.full(wl.size, args.thickness_nm), wl, [args.material] * wl.size)
    outputs = []
    if model.kind == "mlp":
        lines = ["wavelength_nm,absorbed_power,absorbed_flux"]
        lines += [",".join("%.9e" % v for v in (w, *p)) for w, p in zip(wl, pred)]
        path = args.out / "predictions.csv"
        path.write_text("\n".join(lines) + "\n")
        outputs.append(path)
    else:
        (args.out / "maps").mkdir(exist_ok=True)
        for w, m in zip(wl, pred):
            path = args.out / "maps" / f"predicted_{w:g}nm.csv"
            np.savetxt(path, m, fmt="%.9e", delimiter=",", newline="\n")
            outputs.append(path)
    _write_metadata(args, argv, args.out, inputs=[args.model], outputs=outputs, extra={"model_kind": model.kind})


def cmd_explain(args, argv):
    from . import attribution
    from .dataset import feature_matrix
    from .errors import UsageError
    from .surrogate import load_model

    model = load_model(args.model)
    if model.kind != "mlp":
        raise UsageError("explain needs an MLP model (absorbed power / flux outputs)")
    path = _records_path(args.data)
    records = [r for r in _training_records(path) if np.isfinite(r.absorbed_power)]
    x, _ = feature_matrix(records, model.x_scaler)
    background = attribution.background_sample(x, seed=args.seed)
    if len(x) > args.max_instances:
        rng = np.random.default_rng(args.seed)
        x = x[np.sort(rng.choice(len(x), args.max_instances, replace=False))]
    f = attribution.model_output(model, TARGETS.index(args.target))
    importance = attribution.global_importance(f, x, background)
    attribution.write_outputs(importance, args.out)
    outputs = [args.out / "explanations.csv", args.out / "summary.csv"]
    ranking = list(importance.ranking)
    _write_metadata(args, argv, args.out, inputs=[args.model, path], outputs=outputs, extra={"ranking": ranking})
    print("ranking: " + ", ".join(ranking))


def cmd_plot(args, argv):
    from . import plotting

    stem = args.name or args.input.stem
    if args.kind == "map":
        out = args.out / f"{stem}.pgm"
        plotting.write_map_plot(args.input, out)
        outputs = [out, Path(str(out) + ".txt")]
    else:
        out = args.out / f"{stem}.svg"
        writer = {
            "spectrum": plotting.write_spectrum_plot,
            "losscurve": plotting.write_loss_plot,
            "shap-summary": plotting.write_shap_plot,
        }[args.kind]
        writer(args.input, out)
        outputs = [out]
    _write_metadata(args, argv, args.out, inputs=[args.input], outputs=outputs, extra={"kind": args.kind})


HANDLERS = {
    "simulate": cmd_simulate,
    "tmm": cmd_tmm,
    "sweep": cmd_sweep,
    "train-mlp": cmd_train_mlp,
    "train-cnn": cmd_train_cnn,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        command, config_path = _config_argument(argv)
        if command is not None and config_path is not None:
            _apply_config(parser, command, config_path)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](args, argv)
    except (PlasmoError, OSError, ValueError) as exc:
        print(f"plasmo {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
