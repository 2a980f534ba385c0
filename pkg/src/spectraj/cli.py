"""Command line entry point: ``spectraj <command> [options]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from dataclasses import asdict
from pathlib import Path
from typing import Optional

from . import __version__, _kernels
from .data import (
    IngestConfig,
    ScenarioFormatError,
    ScenarioTensor,
    LabeledScenario,
    SyntheticSpec,
    balanced_split,
    generate_dataset,
    ingest_highway_csv,
    read_scenarios,
    write_scenarios,
)
from .evaluation import evaluate, filtering_study, format_ablation, run_q_ablation
from .model import (
    TrainConfig,
    TrainingDivergedError,
    forward,
    load_checkpoint,
    prepare_batch,
    save_checkpoint,
    train,
)
from .spectral import factor_bases, gft_forward, gft_inverse, write_spectrum_csv

log = logging.getLogger("spectraj")

SCENARIO_FILE = "scenarios.csv"


class CommandError(Exception):
    pass


def read_config(path) -> dict[str, str]:
    """``key = value`` lines (``:`` also accepted); ``#`` starts a comment."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = "=" if "=" in line else (":" if ":" in line else None)
            if sep is None:
                raise CommandError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split(sep, 1))
            if not key:
                raise CommandError(f"{path}:{lineno}: empty key")
            out[key] = value
    return out


class Outputs:
    """Tracks written files so a failed command can remove its partial outputs."""

    def __init__(self, directory: Path):
        self.dir = directory
        self.paths: list[Path] = []
        self._created_dir = not directory.exists()

    def path(self, name: str) -> Path:
        self.dir.mkdir(parents=True, exist_ok=True)
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.paths.append(p)
        return p

    def add(self, paths) -> None:
        self.paths.extend(Path(p) for p in paths)

    def rollback(self) -> None:
        for p in self.paths:
            if p.exists():
                p.unlink()
        if self._created_dir and self.dir.exists():
            for sub in sorted(self.dir.rglob("*"), reverse=True):
                if sub.is_dir() and not any(sub.iterdir()):
                    sub.rmdir()
            if not any(self.dir.iterdir()):
                self.dir.rmdir()


class Settings:
    """Resolved hyper-parameters: command-line flag > config file > default."""

    DEFAULTS = {
        "seed": 0, "p": None, "q": None, "f_hz": 10.0, "t_obs_s": 3.0, "t_pred_s": 5.0,
        "n_vehicles": 9, "n_lanes": 3, "noise": 0.05, "n_per_class": 100,
        "epochs": 60, "learning_rate": 1e-4, "batch_size": 64, "train_fraction": 0.7,
    }
    TYPES = {"seed": int, "p": int, "q": int, "n_vehicles": int, "n_lanes": int, "n_per_class": int,
             "epochs": int, "batch_size": int}

    def __init__(self, args: argparse.Namespace):
        self.config_path = args.config
        self.file = read_config(args.config) if args.config else {}
        self.args = args

    def get(self, key: str):
        val = getattr(self.args, key, None)
        if val is None and key in self.file:
            val = self.file[key]
        if val is None:
            val = self.DEFAULTS.get(key)
        if val is None:
            return None
        cast = self.TYPES.get(key, float)
        try:
            return cast(val)
        except (TypeError, ValueError):
            raise CommandError(f"bad value for {key}: {val!r}") from None

    def resolved(self, *keys: str) -> dict:
        return {k: self.get(k) for k in keys}


MANIFEST_KEYS = ("p", "q", "f_hz", "t_obs_s", "t_pred_s", "n_vehicles")


def dataset_shape(scenarios) -> dict:
    obs = scenarios[0].raw_observation
    f = obs.sample_rate_hz
    return {"f_hz": f, "t_obs_s": obs.n_steps / f, "t_pred_s": scenarios[0].h_pred / f, "n_vehicles": obs.n_slots}


def write_manifest(outputs: Outputs, args, settings: Settings, hyper: dict, inputs: list) -> None:
    hyper = {**{k: None for k in MANIFEST_KEYS}, **hyper}
    manifest = {
        "command": args.command,
        "argv": list(args.argv),
        "config": str(settings.config_path) if settings.config_path else None,
        "config_values": settings.file,
        "seed": settings.get("seed"),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs.paths],
        "hyper_parameters": hyper,
        "tool_version": __version__,
        "kernel_backend": _kernels.backend_name(),
    }
    path = outputs.path("manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _dataset_file(path) -> Path:
    p = Path(path)
    if p.is_dir():
        p = p / SCENARIO_FILE
    if not p.exists():
        raise CommandError(f"no scenario file at {p}")
    return p


def _load_dataset(path) -> list[LabeledScenario]:
    scenarios = read_scenarios(_dataset_file(path))
    if not scenarios:
        raise CommandError(f"{path}: dataset is empty")
    return scenarios


def _write_split(outputs: Outputs, scenarios, fraction: Optional[float], seed: int) -> None:
    if fraction is None:
        outputs.add(write_scenarios(outputs.path(SCENARIO_FILE), scenarios))
        return
    train_set, test_set = balanced_split(scenarios, fraction, seed)
    for name, subset in (("train", train_set), ("test", test_set)):
        if subset:
            outputs.add(write_scenarios(outputs.path(f"{name}/{SCENARIO_FILE}"), subset))


def _pick(scenarios, scenario_id):
    if scenario_id is None:
        return scenarios
    chosen = [s for s in scenarios if s.scenario_id == scenario_id]
    if not chosen:
        raise CommandError(f"scenario {scenario_id!r} not found")
    return chosen


# --------------------------------------------------------------------------- commands


def cmd_synth(args, settings: Settings, outputs: Outputs):
    hyper = settings.resolved("seed", "f_hz", "t_obs_s", "t_pred_s", "n_vehicles", "n_lanes", "noise", "n_per_class")
    scenarios = generate_dataset(
        hyper["n_per_class"], seed=hyper["seed"], n_lanes=hyper["n_lanes"], n_vehicles=hyper["n_vehicles"],
        noise=hyper["noise"], f_hz=hyper["f_hz"], t_obs_s=hyper["t_obs_s"], t_pred_s=hyper["t_pred_s"],
    )
    _write_split(outputs, scenarios, args.split, hyper["seed"])
    print(f"wrote {len(scenarios)} scenarios to {outputs.dir}")
    return hyper, []


def cmd_ingest(args, settings: Settings, outputs: Outputs):
    cfg = IngestConfig.from_mapping(settings.file)
    scenarios = ingest_highway_csv(args.tracks, args.meta, cfg)
    if not scenarios:
        raise CommandError(f"no eligible windows in {args.tracks}")
    seed = settings.get("seed")
    _write_split(outputs, scenarios, args.split, seed)
    counts = {m: sum(s.maneuver == m for s in scenarios) for m in sorted({s.maneuver for s in scenarios})}
    print(f"extracted {len(scenarios)} windows: {counts}")
    hyper = {k: v for k, v in asdict(cfg).items()}
    hyper["seed"] = seed
    return hyper, [args.tracks] + ([args.meta] if args.meta else [])


def _observation(sc: LabeledScenario, raw: bool) -> ScenarioTensor:
    return sc.raw_observation if raw else sc.observation


def cmd_spectrum(args, settings: Settings, outputs: Outputs):
    scenarios = _pick(read_scenarios(args.scenario), args.scenario_id)
    if not scenarios:
        raise CommandError("scenario file holds no scenarios")
    for sc in scenarios:
        obs = _observation(sc, args.raw)
        spec = gft_forward(obs, *factor_bases(obs.n_slots, obs.n_steps))
        write_spectrum_csv(spec, outputs.path(f"spectrum_{sc.scenario_id}.csv"))
    print(f"wrote {len(scenarios)} spectra to {outputs.dir}")
    return {**dataset_shape(scenarios), "raw": args.raw}, [args.scenario]


def _parse_keep(text: str) -> list[list[int]]:
    try:
        return [[int(i) for i in grp.split(",") if i.strip()] for grp in text.split(";")]
    except ValueError:
        raise CommandError(f"bad --keep value {text!r}; use e.g. '0,1,2,3;0,1,2;0'") from None


def cmd_filter(args, settings: Settings, outputs: Outputs):
    scenarios = _pick(read_scenarios(args.scenario), args.scenario_id)
    keep_sets = _parse_keep(args.keep)
    for sc in scenarios:
        obs = _observation(sc, args.raw)
        for vi, variant in enumerate(filtering_study(obs, keep_sets)):
            tag = f"{sc.scenario_id}_v{vi}"
            filt = LabeledScenario(
                f"{sc.scenario_id}/keep={'-'.join(map(str, variant.keep))}",
                ScenarioTensor(variant.filtered, obs.sample_rate_hz, obs.slot_mask),
                None, sc.maneuver, max(sc.h_pred, obs.n_steps),
            )
            outputs.add(write_scenarios(outputs.path(f"filtered_{tag}.csv"), [filt]))
            write_spectrum_csv(variant.spectrum, outputs.path(f"spectrum_{tag}.csv"))
    return {**dataset_shape(scenarios), "keep": keep_sets, "raw": args.raw}, [args.scenario]


def _train_config(settings: Settings) -> TrainConfig:
    epochs = settings.get("epochs")
    if epochs < 1:
        raise CommandError("epochs must be >= 1")
    return TrainConfig(
        learning_rate=settings.get("learning_rate"), epochs=epochs, batch_size=settings.get("batch_size"),
        seed=settings.get("seed"), p=settings.get("p"), q=settings.get("q"),
    )


def cmd_train(args, settings: Settings, outputs: Outputs):
    scenarios = _load_dataset(args.dataset)
    cfg = _train_config(settings)
    resume = load_checkpoint(args.resume) if args.resume else None
    result = train(scenarios, cfg, resume=resume)
    save_checkpoint(outputs.path("checkpoint.npz"), result)
    with open(outputs.path("loss_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(result.loss_curve, start=1):
            w.writerow([i, f"{v:.9g}"])
    print(f"trained {result.epochs_done} epochs; final loss {result.loss_curve[-1]:.6g}")
    hyper = {**dataset_shape(scenarios), **asdict(cfg)}
    hyper.update(p=result.params.p, q=result.params.q, h_pred=result.params.h_pred,
                 n_vehicles=result.params.n_vehicles)
    return hyper, [args.dataset] + ([args.resume] if args.resume else [])


def cmd_predict(args, settings: Settings, outputs: Outputs):
    params = load_checkpoint(args.checkpoint).params
    scenarios = _load_dataset(args.dataset)
    batch = prepare_batch(scenarios, params.p, with_future=False)
    full = gft_inverse(forward(params, batch.inputs), *factor_bases(params.n_vehicles, params.h_pred))
    with open(outputs.path("predictions.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario_id", "slot", "t_index", "x_m", "y_m"])
        for sc, pred in zip(scenarios, full):
            for s in range(pred.shape[1]):
                for t in range(pred.shape[2]):
                    w.writerow([sc.scenario_id, s, t, f"{pred[0, s, t]:.9g}", f"{pred[1, s, t]:.9g}"])
    return {**dataset_shape(scenarios), "p": params.p, "q": params.q}, [args.checkpoint, args.dataset]


def cmd_eval(args, settings: Settings, outputs: Outputs):
    params = load_checkpoint(args.checkpoint).params
    scenarios = _load_dataset(args.dataset)
    if any(sc.future is None for sc in scenarios):
        raise CommandError("evaluation needs scenarios with future rows")
    report = evaluate(params, scenarios)
    outputs.path("metrics.json").write_text(report.to_json() + "\n")
    outputs.path("metrics.txt").write_text(report.to_text() + "\n")
    print(report.to_text())
    return {**dataset_shape(scenarios), "p": params.p, "q": params.q}, [args.checkpoint, args.dataset]


def cmd_ablate(args, settings: Settings, outputs: Outputs):
    scenarios = _load_dataset(args.dataset)
    try:
        q_values = [int(q) for q in args.q_values.split(",") if q.strip()]
    except ValueError:
        raise CommandError(f"bad --q-values {args.q_values!r}") from None
    cfg = _train_config(settings)
    rows = run_q_ablation(scenarios, q_values, cfg, settings.get("train_fraction"))
    outputs.path("ablation.json").write_text(json.dumps([asdict(r) for r in rows], indent=2) + "\n")
    outputs.path("ablation.txt").write_text(format_ablation(rows) + "\n")
    print(format_ablation(rows))
    hyper = {**dataset_shape(scenarios), **asdict(cfg)}
    hyper["q_values"] = q_values
    return hyper, [args.dataset]


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--p", type=int, help="lowest temporal frequencies kept at the input")
    common.add_argument("--q", type=int, help="lowest temporal frequencies predicted")
    common.add_argument("--threads", type=int, default=None, help="kernel threads (default: all cores)")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="spectraj", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a balanced synthetic dataset")
    p.add_argument("--n-per-class", dest="n_per_class", type=int)
    p.add_argument("--n-vehicles", dest="n_vehicles", type=int)
    p.add_argument("--n-lanes", dest="n_lanes", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--f-hz", dest="f_hz", type=float)
    p.add_argument("--t-obs", dest="t_obs_s", type=float)
    p.add_argument("--t-pred", dest="t_pred_s", type=float)
    p.add_argument("--split", type=float, default=None, help="write balanced train/ and test/ subsets")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", parents=[common], help="extract scenarios from highway track CSVs")
    p.add_argument("tracks", type=Path)
    p.add_argument("--meta", type=Path, default=None)
    p.add_argument("--split", type=float, default=None)
    p.set_defaults(func=cmd_ingest)

    for name, func, helptext in (
        ("spectrum", cmd_spectrum, "dump the observation spectrum"),
        ("filter", cmd_filter, "spatial frequency filtering study"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("scenario", type=Path)
        p.add_argument("--scenario-id", dest="scenario_id")
        p.add_argument("--raw", action="store_true", help="use the observation before upsampling")
        if name == "filter":
            p.add_argument("--keep", required=True, help="';'-separated spatial index sets, e.g. '0,1,2;0'")
        p.set_defaults(func=func)

    p = sub.add_parser("train", parents=[common], help="train the spectral predictor")
    p.add_argument("dataset", type=Path)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--resume", type=Path, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict every slot's trajectory")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("dataset", type=Path)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="ADE / FDE of a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("dataset", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="train and evaluate one model per q")
    p.add_argument("dataset", type=Path)
    p.add_argument("--q-values", dest="q_values", default="30,40,50,80,125")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.set_defaults(func=cmd_ablate)
    return parser


def _set_threads(n: Optional[int]) -> None:
    # numba already defaults to every core; only touch the pool when asked
    if n is None or not _kernels.USE_NUMBA:
        return
    import numba

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", numba.NumbaWarning)
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv: Optional[list[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    _set_threads(args.threads)

    outputs = Outputs(args.out)
    try:
        settings = Settings(args)
        hyper, inputs = args.func(args, settings, outputs)
        write_manifest(outputs, args, settings, hyper, inputs)
    except (CommandError, ScenarioFormatError, TrainingDivergedError, FloatingPointError,
            ValueError, FileNotFoundError) as exc:
        outputs.rollback()
        print(f"spectraj {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        outputs.rollback()
        raise
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
