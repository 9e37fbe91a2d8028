"""Command line entry point: ``magloc <subcommand> [--config run.json] [overrides]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.  Failures print one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

from magloc.data import (
    DEFAULT_EXCLUSIONS,
    MAGPIE_COLUMN_MAP,
    BuildingSet,
    ColumnMap,
    SynthConfig,
    exclude_trials,
    ingest_magpie,
    inspect_files,
    read_building,
    synth_generate,
    write_building,
)
from magloc.errors import ConfigError, DataError, MaglocError, NumericalError
from magloc.evalkit import SweepResult, emit_report, evaluate, find_threshold, sweep
from magloc.features import WINDOW, windows_for
from magloc.magnet import MagNetConfig, build, load_model, save_model
from magloc.numkit import count_params
from magloc.perturb import KINDS, Scenario, perturb_trials
from magloc.trainer import SplitSpec, TrainConfig, split, train

log = logging.getLogger("magloc")

DEFAULT_RUN_CONFIG = {
    "dataset": {
        "source": "synth",
        "path": None,
        "building": None,
        "column_map": None,
        "synth": SynthConfig().to_dict(),
        "exclusions": [list(e) for e in DEFAULT_EXCLUSIONS],
    },
    "mode": "raw3d",
    "variant": "S",
    "scenario": Scenario().to_dict(),
    "split": SplitSpec().to_dict(),
    "train": {k: v for k, v in TrainConfig().to_dict().items() if k != "loss"},
    "eval": {"stride": 1, "per_coordinate": False},
    "sweep": {
        "sigmas": [float(s) for s in range(21)],
        "kinds": ["random_test", "random_both"],
        "modes": ["raw3d", "inv2d"],
        "variants": ["S"],
        "period_s": 1.0,
        "replicate_invariant": False,
    },
    "window": WINDOW,
    "gravity_alpha": 1.0,
    "seed": 0,
    "output_dir": "runs/default",
}
# sections validated by their own parsers instead of the key check below
FREE_FORM = {("dataset", "synth"), ("dataset", "column_map"), ("split", "assignment")}
EXIT_CODES = ((NumericalError, 3), (DataError, 2), (ConfigError, 1), (MaglocError, 1))


def _check_keys(cfg: dict, ref: dict, path=()) -> None:
    for key, value in cfg.items():
        if key not in ref:
            raise ConfigError(f"unknown config key {'.'.join(path + (key,))!r}")
        if isinstance(ref[key], dict) and path + (key,) not in FREE_FORM:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {'.'.join(path + (key,))!r} must be an object")
            _check_keys(value, ref[key], path + (key,))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("column_map", "assignment"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _set_path(cfg: dict, dotted: str, raw: str) -> None:
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        if not isinstance(node.get(k), dict):
            node[k] = {}
        node = node[k]
    node[keys[-1]] = value


def resolve_config(args) -> dict:
    """Defaults <- config file <- flag overrides, validated."""
    user = {}
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("run config must be a JSON object")
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        _set_path(user, key, raw)
    for flag, key in (("out", "output_dir"), ("seed", "seed"), ("mode", "mode"), ("variant", "variant")):
        value = getattr(args, flag, None)
        if value is not None:
            user[key] = value
    _check_keys(user, DEFAULT_RUN_CONFIG)
    cfg = _merge(DEFAULT_RUN_CONFIG, user)
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    if cfg["mode"] not in ("raw3d", "inv2d"):
        raise ConfigError(f"invalid mode {cfg['mode']!r}; expected raw3d or inv2d")
    if cfg["variant"] not in ("S", "XL"):
        raise ConfigError(f"invalid variant {cfg['variant']!r}; expected S or XL")
    if cfg["dataset"]["source"] not in ("synth", "magpie", "normalized"):
        raise ConfigError(f"invalid dataset source {cfg['dataset']['source']!r}")
    Scenario.from_dict(cfg["scenario"])
    SplitSpec.from_dict(cfg["split"])
    TrainConfig.from_dict(cfg["train"])
    SynthConfig.from_dict(cfg["dataset"]["synth"])
    if cfg["dataset"]["column_map"] is not None:
        ColumnMap.from_dict(cfg["dataset"]["column_map"])
    sw = cfg["sweep"]
    for kind in sw["kinds"]:
        if kind not in KINDS:
            raise ConfigError(f"invalid sweep kind {kind!r}")
    for m in sw["modes"]:
        if m not in ("raw3d", "inv2d"):
            raise ConfigError(f"invalid sweep mode {m!r}")
    for v in sw["variants"]:
        if v not in ("S", "XL"):
            raise ConfigError(f"invalid sweep variant {v!r}")


class RunDir:
    """Output directory that freezes the config and keeps a manifest of emitted files."""

    def __init__(self, cfg: dict):
        self.root = Path(cfg["output_dir"])
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: set[Path] = set()
        self.write_json("run_config.json", cfg)

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, p: Path) -> Path:
        self.files.add(Path(p))
        return p

    def write_json(self, rel: str, obj) -> Path:
        p = self.path(rel)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return self.add(p)

    def finish(self) -> None:
        manifest_path = self.root / "manifest.json"
        old = {}
        if manifest_path.exists():
            try:
                old = {e["path"]: e for e in json.loads(manifest_path.read_text())["files"]}
            except (json.JSONDecodeError, KeyError):
                old = {}
        for p in self.files:
            rel = p.relative_to(self.root).as_posix()
            data = p.read_bytes()
            old[rel] = {"path": rel, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
        entries = [old[k] for k in sorted(old) if (self.root / k).exists()]
        manifest_path.write_text(json.dumps({"files": entries}, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _column_map(ds: dict) -> ColumnMap:
    """The MagPie default map with any ``dataset.column_map`` entries laid over it."""
    return ColumnMap.from_dict({**MAGPIE_COLUMN_MAP.to_dict(), **(ds["column_map"] or {})})


def load_dataset(cfg: dict) -> BuildingSet:
    ds = cfg["dataset"]
    if ds["source"] == "synth":
        bset = synth_generate(SynthConfig.from_dict(ds["synth"]))
    else:
        if not ds["path"]:
            raise ConfigError(f"dataset.path is required for source {ds['source']!r}")
        root = Path(ds["path"])
        if ds["building"]:
            root = root / ds["building"]
        if not root.is_dir():
            raise DataError(f"dataset directory {root} does not exist")
        if ds["source"] == "normalized":
            bset = read_building(root, ds["building"])
        else:
            bset = ingest_magpie(root, _column_map(ds), ds["building"])
    bset = exclude_trials(bset, [tuple(e) for e in ds["exclusions"]])
    if len(bset) == 0:
        raise DataError(f"empty dataset: no trials left in {bset.building}")
    return bset


def _splits(cfg, bset):
    return split(bset, SplitSpec.from_dict(cfg["split"]))


def _trainer(cfg: dict, log_dir=None):
    tcfg = TrainConfig.from_dict(cfg["train"])
    window, alpha, seed = cfg["window"], cfg["gravity_alpha"], cfg["seed"]

    def fit(mode, variant, train_trials, val_trials):
        tr = windows_for(train_trials, mode, window, tcfg.stride, alpha)
        va = windows_for(val_trials, mode, window, tcfg.stride, alpha)
        model = build(MagNetConfig.for_mode(mode, variant), seed=seed)
        model, runlog = train(model, tr, va, tcfg, log_dir)
        log.info("trained %s-%s: best epoch %d val MAE %.4f m (%.1fs)", mode, variant, runlog.best_epoch, runlog.best_val_mae, runlog.wall_time)
        fit.last_runlog = runlog
        return model

    fit.last_runlog = None
    return fit


def _write_dataset(run: RunDir, bset: BuildingSet) -> None:
    for p in write_building(bset, run.path(f"data/{bset.building}")):
        run.add(p)
    summary = {
        "building": bset.building,
        "size_class": bset.size_class,
        "bbox": list(bset.bbox) if bset.bbox else None,
        "trials": [{"trial_id": t.trial_id, "samples": len(t), "duration_s": t.duration, "flags": list(t.flags)} for t in bset],
        "warnings": list(bset.warnings),
        "digest": bset.digest(),
    }
    run.write_json("dataset_summary.json", summary)


def cmd_synth(cfg, args):
    run = RunDir(cfg)
    bset = synth_generate(SynthConfig.from_dict(cfg["dataset"]["synth"]))
    _write_dataset(run, bset)
    run.write_json("synth_config.json", SynthConfig.from_dict(cfg["dataset"]["synth"]).to_dict())
    run.finish()


def cmd_ingest(cfg, args):
    if cfg["dataset"]["source"] == "synth":
        raise ConfigError("ingest needs dataset.source 'magpie' or 'normalized'")
    run = RunDir(cfg)
    _write_dataset(run, load_dataset(cfg))
    run.finish()


def cmd_train(cfg, args):
    run = RunDir(cfg)
    bset = load_dataset(cfg)
    tr, va, te = _splits(cfg, bset)
    scenario = Scenario.from_dict(cfg["scenario"])
    tr, va = perturb_trials(tr, scenario, "train"), perturb_trials(va, scenario, "val")
    fit = _trainer(cfg, run.root)
    model = fit(cfg["mode"], cfg["variant"], tr, va)
    save_model(model, run.path("model.magn"))
    run.add(run.root / "model.magn")
    run.add(run.root / "runlog.jsonl")
    run.add(run.root / "train_summary.json")
    run.write_json("split.json", {"train": [t.trial_id for t in tr], "val": [t.trial_id for t in va], "test": [t.trial_id for t in te]})
    run.write_json("model_info.json", {"config": model.config.to_dict(), "parameters": count_params(model), "mode": model.mode})
    run.finish()


def cmd_eval(cfg, args):
    run = RunDir(cfg)
    ckpt = Path(args.checkpoint) if args.checkpoint else run.root / "model.magn"
    if not ckpt.exists():
        raise ConfigError(f"checkpoint {ckpt} not found (run train first or pass --checkpoint)")
    model = load_model(ckpt)
    if model.mode != cfg["mode"]:
        raise ConfigError(f"mode mismatch: config says {cfg['mode']!r}, checkpoint was trained on {model.mode!r}")
    _, _, te = _splits(cfg, load_dataset(cfg))
    report = evaluate(model, te, Scenario.from_dict(cfg["scenario"]), cfg["eval"]["stride"], per_coordinate=cfg["eval"]["per_coordinate"], window=cfg["window"], gravity_alpha=cfg["gravity_alpha"])
    run.write_json("eval_report.json", report.to_dict())
    p = run.path("eval_report.csv")
    p.write_text(
        "building,mode,scenario,mae_m,windows,median_m,p90_m\n"
        f"{report.building},{report.mode},{Scenario.from_dict(report.scenario).label},{report.mae:.6g},{report.windows},{report.median:.6g},{report.p90:.6g}\n",
        encoding="utf-8",
    )
    run.add(p)
    run.finish()
    print(json.dumps(report.to_dict(), sort_keys=True))


def _thresholds(results):
    out = []
    for res in results:
        for a, b in res.pairs():
            th = find_threshold(res.sigmas, res.series[a], res.series[b], f"{res.building}:{res.kind}:{a[3:]}")
            out.append(th)
    return out


def cmd_sweep(cfg, args):
    run = RunDir(cfg)
    bset = load_dataset(cfg)
    tr, va, te = _splits(cfg, bset)
    sw = cfg["sweep"]
    fit = _trainer(cfg)
    cache = {}

    def cached_fit(mode, variant, train_trials, val_trials):
        # test-only kinds share the unperturbed model across kinds
        key = (mode, variant, tuple(t.digest() for t in train_trials), tuple(t.digest() for t in val_trials))
        if key not in cache:
            cache[key] = fit(mode, variant, train_trials, val_trials)
        return cache[key]

    results = []
    for kind in sw["kinds"]:
        res = sweep(
            cached_fit, tr, va, te, sw["sigmas"], kind, sw["modes"], sw["variants"],
            master_seed=cfg["seed"], eval_stride=cfg["eval"]["stride"], period_s=sw["period_s"],
            replicate_invariant=sw["replicate_invariant"], building=bset.building, jobs=args.jobs,
        )
        results.append(res)
    thresholds = _thresholds(results)
    run.write_json("sweep_results.json", {"sweeps": [r.to_dict() for r in results], "thresholds": [t.to_dict() for t in thresholds]})
    for p in emit_report(results, run.root / "report", thresholds):
        run.add(p)
    run.finish()


def cmd_report(cfg, args):
    run = RunDir(cfg)
    src = Path(args.results) if args.results else run.root / "sweep_results.json"
    if not src.exists():
        raise DataError(f"no stored sweep results at {src}")
    stored = json.loads(src.read_text())
    results = [SweepResult.from_dict(d) for d in stored["sweeps"]]
    for p in emit_report(results, run.root / "report", _thresholds(results)):
        run.add(p)
    run.finish()


def cmd_inspect(cfg, args):
    ds = cfg["dataset"]
    if ds["source"] == "synth":
        bset = load_dataset(cfg)
        info = {"building": bset.building, "trials": [{"trial_id": t.trial_id, "samples": len(t), "rate_hz": t.rate, "duration_s": t.duration} for t in bset]}
    else:
        if not ds["path"]:
            raise ConfigError("dataset.path is required to inspect files")
        root = Path(ds["path"]) / (ds["building"] or "")
        cmap = _column_map(ds)
        info = {"column_map": cmap.to_dict(), "files": inspect_files(root, cmap)}
    print(json.dumps(info, indent=2, sort_keys=True))


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "inspect": cmd_inspect,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="magloc", description="Magnetic-field indoor localization pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="run config JSON")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int)
        p.add_argument("--mode", help="raw3d or inv2d")
        p.add_argument("--variant", help="S or XL")
        p.add_argument("--set", action="append", metavar="KEY=JSON", help="override a config value, e.g. train.max_epochs=5")
        if name == "eval":
            p.add_argument("--checkpoint")
        if name == "sweep":
            p.add_argument("--jobs", type=int, default=1)
        if name == "report":
            p.add_argument("--results", help="sweep_results.json to render")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        COMMANDS[args.command](cfg, args)
        return 0
    except (MaglocError, OSError) as exc:
        code = next((c for t, c in EXIT_CODES if isinstance(exc, t)), 2)
        print(json.dumps({"error": type(exc).__name__, "exit_code": code, "message": str(exc)}), file=sys.stderr)
        return code


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
