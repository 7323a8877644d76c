"""Command-line pipeline: synth -> train -> generate/calibrate -> verify/eof/spectrum/bootstrap -> report.

Every stage reads and writes artifacts under ``--out`` so stages can be
rerun on their own.  Values come from the JSON ``--config`` file; command
line flags override them.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import zlib
from contextlib import nullcontext
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, metrics, spatial, synth
from .ensemble import GenerationPlan, generate_ensemble, mva_calibrate
from .errors import ConfigError, DownscaleError
from .fields import (
    EnsembleSeries,
    fit_climatology,
    load_field,
    save_climatology,
    save_field,
    standardize,
)
from .models import (
    KINDS,
    Dataset,
    TrainConfig,
    default_config,
    load_bundle,
    save_bundle,
    train,
    validate_hyperparameters,
)
from .models.mechanisms import config_from_dict

log = logging.getLogger("downscale_uq")

EXIT_OK, EXIT_OTHER, EXIT_USAGE, EXIT_MISSING = 0, 1, 2, 3

DEFAULTS = {
    "seed": 0,
    "out": "run",
    "synth": {},
    "train": {},
    "mechanisms": {},
    "members": 10,
    "samples_per_member": None,
    "lead_week": 1,
    "replicates": 1000,
    "eval_samples": None,
    "k_primes": None,
    "benchmark": {"bias": 0.5, "spread": 0.6},
    "fair_crps": False,
    "cos_weight": False,
    "anomaly_spectrum": False,
    "threads": None,
}

# flag name -> config key
FLAG_KEYS = {
    "seed": "seed", "out": "out", "members": "members", "samples_per_member": "samples_per_member",
    "lead_week": "lead_week", "replicates": "replicates", "threads": "threads",
    "fair_crps": "fair_crps", "cos_weight": "cos_weight", "anomaly_spectrum": "anomaly_spectrum",
}


def derive_seed(root: int, name: str, *extra: int) -> int:
    """Named substream of the root seed, stable across runs and platforms."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode()), *[int(e) for e in extra]])
    return int(ss.generate_state(1, np.uint32)[0])


def resolve_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            user = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        unknown = set(user) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(user)
    for flag, key in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None and val is not False:
            cfg[key] = val
    if not (1 <= int(cfg["lead_week"]) <= 6):
        raise ConfigError("lead week must lie in 1..6")
    if int(cfg["members"]) < 1:
        raise ConfigError("members must be >= 1")
    if int(cfg["replicates"]) < 1:
        raise ConfigError("replicates must be >= 1")
    for kind, hp in cfg["mechanisms"].items():
        if kind not in KINDS:
            raise ConfigError(f"unknown mechanism in config: {kind}")
        validate_hyperparameters(kind, hp)
    return cfg


# -- paths ------------------------------------------------------------------------

class Paths:
    def __init__(self, out):
        self.root = Path(out)

    def f(self, name: str) -> Path:
        return self.root / name

    def model(self, kind: str) -> Path:
        return self.root / "models" / kind

    def ens(self, kind: str, week: int) -> Path:
        return self.root / f"ens_{kind}_w{week}.gfld"

    def bench(self, week: int) -> Path:
        return self.root / f"benchmark_w{week}.gfld"


def _require(path: Path) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing input: {path} (run the upstream stage first)")
    return path


def _synth_config(cfg: dict) -> synth.SynthConfig:
    d = dict(cfg["synth"])
    d.setdefault("seed", derive_seed(cfg["seed"], "synth"))
    return synth.SynthConfig.from_dict(d)


def _splits(p: Paths) -> dict:
    d = json.loads(_require(p.f("splits.json")).read_text())
    return {k: np.asarray(v, dtype=np.int64) for k, v in d.items()}


def _eval_idx(p: Paths, cfg: dict) -> np.ndarray:
    idx = _splits(p)["test"]
    if cfg["eval_samples"]:
        idx = idx[: int(cfg["eval_samples"])]
    return idx


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


# -- commands ----------------------------------------------------------------------

def cmd_synth(cfg: dict, p: Paths) -> None:
    sc = _synth_config(cfg)
    p.root.mkdir(parents=True, exist_ok=True)
    world = synth.make_world(sc)
    save_field(world.x, p.f("x.gfld"))
    save_field(world.y, p.f("y.gfld"))
    save_field(world.oracle.cond_mean, p.f("cond_mean.gfld"))
    _write_json(p.f("splits.json"), {k: v.tolist() for k, v in world.splits.items()})
    weeks = range(1, sc.n_lead_weeks + 1)
    for week, ens in synth.gen_forecast_ensemble(world.x, sc.members, weeks, sc).items():
        save_field(ens, p.f(f"forecast_w{week}.gfld"), {"lead_week": week})
    # raw dynamical benchmark for the target, biased and under-dispersive
    bcfg = replace(sc, seed=derive_seed(cfg["seed"], "synth", 1))
    raw = synth.gen_forecast_ensemble(world.y, sc.members, weeks, bcfg,
                                      bias=float(cfg["benchmark"]["bias"]),
                                      spread=float(cfg["benchmark"]["spread"]))
    for week, ens in raw.items():
        save_field(ens, p.f(f"benchmark_raw_w{week}.gfld"), {"lead_week": week})
    synth.write_oracle_json(world.oracle, p.f("oracle.json"),
                            {"splits": {k: int(v.size) for k, v in world.splits.items()}})


def _train_config(cfg: dict) -> TrainConfig:
    d = dict(cfg["train"])
    if "widths" in d:
        d["widths"] = tuple(d["widths"])
    try:
        return TrainConfig(**d)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def _mechanism(cfg: dict, kind: str):
    d = cfg["mechanisms"].get(kind)
    if d is None:
        return default_config(kind)
    validate_hyperparameters(kind, d)
    try:
        return config_from_dict(kind, d)
    except TypeError as exc:
        raise ConfigError(f"bad {kind} config: {exc}") from exc


def cmd_train(cfg: dict, p: Paths, kind: str) -> None:
    tc = _train_config(cfg)
    hp = {"lr": tc.lr}
    if tc.weight_decay > 0:
        hp["weight_decay"] = tc.weight_decay
    validate_hyperparameters(kind, hp)
    x = load_field(_require(p.f("x.gfld")))
    y = load_field(_require(p.f("y.gfld")))
    sp = _splits(p)
    ds = Dataset.from_physical(x, y, sp["train"], sp["val"])
    bundle = train(kind, ds, tc, derive_seed(cfg["seed"], "train"), _mechanism(cfg, kind))
    save_bundle(bundle, p.model(kind))
    save_climatology(ds.y_clim, p.f("y_clim.json"))


def cmd_generate(cfg: dict, p: Paths, kind: str) -> None:
    week = int(cfg["lead_week"])
    bundle = load_bundle(_require(p.model(kind) / "manifest.json").parent)
    fc = load_field(_require(p.f(f"forecast_w{week}.gfld")))
    m = int(cfg["members"])
    if m > fc.n_members:
        raise ConfigError(f"asked for {m} members, forecast has {fc.n_members}")
    idx = _eval_idx(p, cfg)
    x_ens = standardize(fc.subset(idx).with_values(fc.values[idx, :m]), bundle.x_clim)
    plan = GenerationPlan(kind, cfg["samples_per_member"], derive_seed(cfg["seed"], "sample", week))
    ens = generate_ensemble(bundle, x_ens, plan)
    save_field(ens.with_values(ens.values, variable="wind_speed", units="m s-1"), p.ens(kind, week),
               {"model": kind, "lead_week": week, "P": plan.P, "M": m})


def cmd_calibrate(cfg: dict, p: Paths) -> None:
    week = int(cfg["lead_week"])
    raw = load_field(_require(p.f(f"benchmark_raw_w{week}.gfld")))
    y = load_field(_require(p.f("y.gfld")))
    train_idx = _splits(p)["train"]
    hc = fit_climatology(raw, train_idx, f"benchmark_train_w{week}")
    ref = fit_climatology(y, train_idx, "train")
    idx = _eval_idx(p, cfg)
    m = int(cfg["members"])
    sub = raw.subset(idx).with_values(raw.values[idx, :m])
    save_field(mva_calibrate(sub, hc, ref), p.bench(week), {"model": "benchmark", "lead_week": week})


def _load_pair(cfg: dict, p: Paths, kind: str, args) -> tuple[EnsembleSeries, EnsembleSeries, object]:
    week = int(cfg["lead_week"])
    ens_path = Path(args.ensemble) if getattr(args, "ensemble", None) else p.ens(kind, week)
    ens = load_field(_require(ens_path))
    bench = load_field(_require(p.bench(week)))
    y = load_field(_require(p.f("y.gfld"))).subset(_eval_idx(p, cfg))
    if ens.n_samples != y.n_samples or bench.n_samples != y.n_samples:
        raise ConfigError("ensemble, benchmark and observation sample counts differ "
                          "(rerun generate/calibrate with the same eval_samples)")
    return ens, bench, y


def _scores(ens, obs, cfg, **meta) -> dict:
    return {
        "mse": metrics.mse_ensemble_mean(ens, obs, cos_weight=cfg["cos_weight"], **meta),
        "crps": metrics.crps_ensemble(ens, obs, fair=cfg["fair_crps"], cos_weight=cfg["cos_weight"], **meta),
        "ssr": metrics.ssr(ens, obs, cos_weight=cfg["cos_weight"], **meta),
    }


def cmd_verify(cfg: dict, p: Paths, kind: str, args) -> None:
    week = int(cfg["lead_week"])
    ens, bench, y = _load_pair(cfg, p, kind, args)
    sm = _scores(ens, y, cfg, model=kind, lead_week=week)
    sb = _scores(bench, y, cfg, model="benchmark", lead_week=week)
    out = {"model": kind, "lead_week": week, "members": ens.n_members,
           "benchmark_members": bench.n_members, "metrics": {}}
    for name in ("mse", "crps", "ssr"):
        metrics.write_score_csv(sm[name], p.f(f"scores_{kind}_w{week}_{name}.csv"))
        delta = metrics.relative_difference(sm[name], sb[name])
        metrics.write_score_csv(delta, p.f(f"delta_{kind}_w{week}_{name}.csv"))
        entry = {"model": sm[name].mean, "benchmark": sb[name].mean,
                 "delta_pct_of_means": (sm[name].mean - sb[name].mean) / sb[name].mean * 100.0,
                 "delta_pct_mean": delta.mean}
        if name in ("mse", "crps"):
            entry["skill_score"] = metrics.skill_score(sm[name], sb[name]).mean
        out["metrics"][name] = entry
    out["weighting"] = "cos_lat" if cfg["cos_weight"] else "uniform"
    out["crps_estimator"] = "fair" if cfg["fair_crps"] else "standard"
    _write_json(p.f(f"verify_{kind}_w{week}.json"), out)


def cmd_eof(cfg: dict, p: Paths, kind: str, args) -> None:
    week = int(cfg["lead_week"])
    ens, bench, y = _load_pair(cfg, p, kind, args)
    y_all = load_field(_require(p.f("y.gfld")))
    basis = spatial.compute_eofs(y_all.subset(_splits(p)["train"]), cos_weight=cfg["cos_weight"])
    kp = cfg["k_primes"] or sorted({k for k in (1, 2, 3, 5, 10, 20, 50, 100, 200, basis.K) if k <= basis.K})
    rows = spatial.eof_skill_curve(ens, bench, y, basis, kp, fair=cfg["fair_crps"])
    spatial.write_eof_curve_csv(p.f(f"eof_{kind}_w{week}.csv"), rows)


def cmd_spectrum(cfg: dict, p: Paths, kind: str, args) -> None:
    week = int(cfg["lead_week"])
    ens, _, y = _load_pair(cfg, p, kind, args)
    a = cfg["anomaly_spectrum"]
    spatial.write_spectrum_csv(p.f(f"spectrum_{kind}_w{week}.csv"),
                               spatial.zonal_spectrum(ens, anomaly=a), spatial.zonal_spectrum(y, anomaly=a))


def cmd_bootstrap(cfg: dict, p: Paths, kind: str, args) -> None:
    week = int(cfg["lead_week"])
    ens, bench, y = _load_pair(cfg, p, kind, args)
    seed = derive_seed(cfg["seed"], "bootstrap", week)
    summary = {"model": kind, "lead_week": week}
    for score in metrics.SCORE_KINDS:
        res = metrics.bootstrap_significance(ens, bench, y, score, int(cfg["replicates"]), seed,
                                             fair=cfg["fair_crps"], cos_weight=cfg["cos_weight"])
        metrics.write_score_csv(res.grid_table(), p.f(f"bootstrap_{kind}_w{week}_{score}.csv"), res.grid_p)
        summary[score] = res.summary()
    _write_json(p.f(f"bootstrap_{kind}_w{week}.json"), summary)


def cmd_report(cfg: dict, p: Paths) -> None:
    """Join all verify/bootstrap JSONs into summary.json keyed by model, lead week, metric."""
    report: dict = {}
    files = sorted(p.root.glob("verify_*_w*.json"))
    if not files:
        raise FileNotFoundError(f"no verify outputs under {p.root}")
    for f in files:
        v = json.loads(f.read_text())
        kind, week = v["model"], str(v["lead_week"])
        boot = p.f(f"bootstrap_{kind}_w{week}.json")
        b = json.loads(boot.read_text()) if boot.exists() else {}
        for name, entry in v["metrics"].items():
            e = dict(entry)
            if name in b:
                e["bootstrap_median_delta_pct"] = b[name]["median_delta_pct"]
                e["p_value"] = b[name]["p_value"]
                e["significant"] = b[name]["significant"]
            report.setdefault(kind, {}).setdefault(week, {})[name] = e
    _write_json(p.f("summary.json"), {"version": __version__, "results": report})


# -- argument parsing -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration; flags override its values")
    common.add_argument("--seed", type=int, help="root seed for all named random substreams")
    common.add_argument("--out", help="artifact directory (default: run)")
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    common.add_argument("--members", type=int, help="number of input members M to use")
    common.add_argument("--samples-per-member", type=int, dest="samples_per_member",
                        help="P draws per input member (default 10 for QNN, 20 otherwise)")
    common.add_argument("--lead-week", type=int, choices=range(1, 7), dest="lead_week")
    common.add_argument("--replicates", type=int, help="bootstrap replicates R")
    common.add_argument("--fair-crps", action="store_true", dest="fair_crps")
    common.add_argument("--cos-weight", action="store_true", dest="cos_weight")
    common.add_argument("--anomaly-spectrum", action="store_true", dest="anomaly_spectrum")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="downscale-uq", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write the synthetic world")
    for name, hlp in (("train", "train one mechanism"),
                      ("generate", "downscale the forecast ensemble"),
                      ("verify", "MSE/CRPS/SSR tables against the benchmark"),
                      ("eof", "EOF-truncated skill curve"),
                      ("spectrum", "zonal energy spectra and RESS"),
                      ("bootstrap", "paired bootstrap significance")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--model", required=True, choices=KINDS)
        if name in ("verify", "eof", "spectrum", "bootstrap"):
            sp.add_argument("--ensemble", help="verify this GFLD1 ensemble instead of the model output")
    sub.add_parser("calibrate", parents=[common], help="mean-variance calibrate the benchmark")
    sub.add_parser("report", parents=[common], help="join all tables into summary.json")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        p = Paths(cfg["out"])
        with _thread_limit(cfg["threads"]):
            c = args.command
            if c == "synth":
                cmd_synth(cfg, p)
            elif c == "train":
                cmd_train(cfg, p, args.model)
            elif c == "generate":
                cmd_generate(cfg, p, args.model)
            elif c == "calibrate":
                cmd_calibrate(cfg, p)
            elif c == "verify":
                cmd_verify(cfg, p, args.model, args)
            elif c == "eof":
                cmd_eof(cfg, p, args.model, args)
            elif c == "spectrum":
                cmd_spectrum(cfg, p, args.model, args)
            elif c == "bootstrap":
                cmd_bootstrap(cfg, p, args.model, args)
            elif c == "report":
                cmd_report(cfg, p)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except DownscaleError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001 - report anything else with a nonzero code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    return EXIT_OK


def _thread_limit(n):
    return threadpool_limits(limits=int(n)) if n else nullcontext()


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
