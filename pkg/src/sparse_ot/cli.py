"""Command-line entry point: ``sparse-ot <command> [--config FILE] [--set key=value ...]``.

Commands: generate, train, anneal, evaluate, oracle, report.  All settings
live in one flat JSON namespace; ``--set`` overrides any key and values are
parsed as JSON when possible (``--set widths=[32,32,1]``).
Exit codes: 0 success, 1 usage error, 2 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import controller, data, icnn, metrics, reference, trainer
from .errors import NumericalError
from .penalty import Penalty

log = logging.getLogger("sparse_ot")

DEFAULTS = {
    "out": "run",
    "seed": 0,
    # data
    "source": None,
    "target": None,
    "truth": None,
    "generator": "gaussian_shift",
    "n": 1000,
    "d": 2,
    "k": 2,
    "effect": 5.0,
    "noise_sigma": 0.03,
    "jitter": 0.1,
    "base_scale": 0.15,
    "shift": 3.0,
    "ring_radius": 5.0,
    "std": 0.5,
    "format": "csv",
    # training
    "lambda": 0.0,
    "penalty": "l1",
    "gamma": 100.0,
    "xi": 1.0,
    "batch_size": 128,
    "lr_f": 1e-4,
    "lr_g": 1e-4,
    "beta1": 0.5,
    "beta2": 0.9,
    "inner_steps": 10,
    "total_iters": 1000,
    "log_every": 100,
    "widths": None,
    "activation": "softplus",
    "quadratic": 1.0,
    "quadratic_f": 0.1,
    "init_scale": 1.0,
    # annealing
    "mode": "low",
    "lambda0": 1e-3,
    "tem0": 1.0,
    "tem_min": 0.15,
    "decay": 0.95,
    "radius": 3.0,
    "r_low": 0.05,
    "n_ini": 20000,
    "n_tr": 2000,
    "n_sm": 2000,
    "a": 0.5,
    "l": None,
    "accept_sign": "min",
    # evaluation / oracle / report
    "checkpoint": None,
    "n_proj": 128,
    "threshold": 1e-2,
    "eval_size": 1024,
    "solver": "sinkhorn",
    "epsilon": 1e-2,
    "oracle_lambda": 1.0,
    "trajectories": [],
}

COMMANDS = ("generate", "train", "anneal", "evaluate", "oracle", "report")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path=None, overrides=()):
    cfg = dict(DEFAULTS)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise UsageError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{path}: config must be a JSON object")
        _merge(cfg, loaded)
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        _merge(cfg, {k.strip(): _parse_value(v)})
    return cfg


def _merge(cfg, new):
    unknown = sorted(set(new) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown config keys {unknown}; valid keys: {', '.join(sorted(DEFAULTS))}")
    cfg.update(new)


def train_config(cfg):
    pen = cfg["penalty"]
    if isinstance(pen, str):
        pen = {"kind": pen, "gamma": cfg["gamma"], "xi": cfg["xi"]}
    return trainer.TrainConfig(
        batch_size=int(cfg["batch_size"]), lr_f=float(cfg["lr_f"]), lr_g=float(cfg["lr_g"]),
        beta1=float(cfg["beta1"]), beta2=float(cfg["beta2"]), inner_steps=int(cfg["inner_steps"]),
        total_iters=int(cfg["total_iters"]), lam=float(cfg["lambda"]), penalty=Penalty.from_config(pen),
        seed=int(cfg["seed"]), log_every=int(cfg["log_every"]), widths=cfg["widths"],
        activation=cfg["activation"], quadratic=float(cfg["quadratic"]),
        quadratic_f=float(cfg["quadratic_f"]), init_scale=float(cfg["init_scale"]))


def anneal_config(cfg):
    return controller.AnnealConfig(
        lambda0=float(cfg["lambda0"]), tem0=float(cfg["tem0"]), tem_min=float(cfg["tem_min"]),
        decay=float(cfg["decay"]), radius=float(cfg["radius"]), r_low=float(cfg["r_low"]),
        n_ini=int(cfg["n_ini"]), n_tr=int(cfg["n_tr"]), n_sm=int(cfg["n_sm"]), mode=cfg["mode"],
        a=float(cfg["a"]), l=cfg["l"], seed=int(cfg["seed"]), accept_sign=cfg["accept_sign"],
        n_proj=int(cfg["n_proj"]), threshold=float(cfg["threshold"]), eval_size=int(cfg["eval_size"]))


def generate_data(cfg):
    """Returns ``(source, target, truth_idx or None)`` for the configured generator."""
    gen, n, seed = cfg["generator"], int(cfg["n"]), int(cfg["seed"])
    if gen == "gaussian_shift":
        rng = np.random.default_rng(seed)
        d = int(cfg["d"])
        src = rng.normal(size=(n, d))
        tgt = rng.normal(size=(n, d)) + float(cfg["shift"])
        return src, tgt, None
    if gen == "eight_gaussians":
        src, tgt = data.gen_eight_gaussians(n, float(cfg["ring_radius"]), float(cfg["std"]), seed)
        return src, tgt, None
    if gen == "synthetic":
        spec = data.SyntheticSpec(n=n, d=int(cfg["d"]), k=int(cfg["k"]), effect=float(cfg["effect"]),
                                  noise_sigma=float(cfg["noise_sigma"]), jitter=float(cfg["jitter"]),
                                  base_scale=float(cfg["base_scale"]), seed=seed)
        return data.gen_synthetic_perturbation(spec)
    raise UsageError(f"unknown generator {gen!r}; choose gaussian_shift, eight_gaussians or synthetic")


def _read(path):
    if not Path(path).exists():
        raise UsageError(f"file not found: {path}")
    return data.load_matrix(path)


def load_data(cfg):
    if (cfg["source"] is None) != (cfg["target"] is None):
        raise UsageError("set both source and target, or neither to use the generator")
    if cfg["source"] is None:
        return generate_data(cfg)
    truth = None
    if cfg["truth"] is not None:
        truth = np.asarray(json.loads(Path(cfg["truth"]).read_text()), dtype=int)
    return _read(cfg["source"]), _read(cfg["target"]), truth


def _outdir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, default=_jsonable))


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


# --------------------------------------------------------------------------
# commands


def cmd_generate(cfg):
    src, tgt, truth = generate_data(cfg)
    out = _outdir(cfg)
    ext = ".bin" if cfg["format"] == "bin" else ".csv"
    data.save_matrix(src, out / f"source{ext}")
    data.save_matrix(tgt, out / f"target{ext}")
    if truth is not None:
        _write_json(out / "truth.json", truth)
    print(f"wrote {len(src)} source and {len(tgt)} target rows to {out}")


def _save_run(out, cfg, pair, traj):
    icnn.save(pair.f, out / "f.icnn")
    icnn.save(pair.g, out / "g.icnn")
    traj.write_jsonl(out / "trajectory.jsonl")
    _write_json(out / "config.json", cfg)


def cmd_train(cfg):
    tcfg = train_config(cfg)
    src, tgt, truth = load_data(cfg)
    out = _outdir(cfg)
    ev_y = src[:min(len(src), int(cfg["eval_size"]))]

    def monitor(pair, lam):
        T = trainer.transport(pair.g, ev_y)
        disp = T - ev_y
        return {"spa": metrics.spa(disp, tcfg.penalty), "res": metrics.sliced_w2(T, tgt, int(cfg["n_proj"]), tcfg.seed),
                "dim": metrics.displacement_dim(disp, float(cfg["threshold"]))}

    # the map pushes the source cloud (Q) onto the target cloud (P)
    pair, traj = trainer.fit(tgt, src, tcfg, monitor=monitor)
    _save_run(out, cfg, pair, traj)
    print(f"trained {pair.iteration} iterations at lambda={tcfg.lam}; outputs in {out}")


def cmd_anneal(cfg):
    tcfg = train_config(cfg)
    acfg = anneal_config(cfg)
    src, tgt, truth = load_data(cfg)
    out = _outdir(cfg)
    run = controller.anneal_high_dim if acfg.mode == "high" else controller.anneal_low_dim
    pair, traj = run(tgt, src, tcfg, acfg)
    summary = dict(traj.summary)
    if truth is not None:
        summary["gene_overlap"] = metrics.gene_overlap(trainer.displacement(pair.g, src), truth)
    _save_run(out, cfg, pair, traj)
    _write_json(out / "summary.json", summary)
    print(json.dumps({k: summary[k] for k in ("final_lambda", "final_dim", "final_res", "phase_boundaries")},
                     default=_jsonable))


def cmd_evaluate(cfg):
    ck = cfg["checkpoint"] or str(Path(cfg["out"]) / "g.icnn")
    if not Path(ck).exists():
        raise UsageError(f"checkpoint not found: {ck}")
    g = icnn.load(ck)
    src, tgt, truth = load_data(cfg)
    tcfg = train_config(cfg)
    rep = metrics.evaluate_map(g, src, tgt, tcfg.penalty, lam=tcfg.lam, n_proj=int(cfg["n_proj"]),
                               seed=tcfg.seed, threshold=float(cfg["threshold"]))
    result = rep.as_dict()
    if truth is not None:
        result["gene_overlap"] = metrics.gene_overlap(trainer.displacement(g, src), truth)
    _write_json(_outdir(cfg) / "eval.json", result)
    print(json.dumps(result, default=_jsonable))


def cmd_oracle(cfg):
    src, tgt, _ = load_data(cfg)
    solver = cfg["solver"]
    if solver == "assignment":
        cost, perm = reference.exact_assignment_w2(src, tgt)
        result = {"solver": solver, "cost": cost}
    elif solver == "sinkhorn":
        cp = reference.sinkhorn(src, tgt, float(cfg["epsilon"]))
        C = 0.5 * ((src[:, None, :] - tgt[None, :, :]) ** 2).sum(axis=2)
        result = {"solver": solver, "cost": cp.cost(C), "marginal_error": cp.marginal_residual(),
                  "iterations": cp.iterations}
    elif solver == "elastic":
        T, cp = reference.fit_elastic_l1(src, tgt, float(cfg["oracle_lambda"]), float(cfg["epsilon"]))
        disp = T - src
        result = {"solver": solver, "dim": metrics.displacement_dim(disp, float(cfg["threshold"])),
                  "res": metrics.sliced_w2(T, tgt, int(cfg["n_proj"]), int(cfg["seed"])),
                  "marginal_error": cp.marginal_residual()}
    else:
        raise UsageError(f"unknown solver {solver!r}; choose assignment, sinkhorn or elastic")
    _write_json(_outdir(cfg) / "oracle.json", result)
    print(json.dumps(result, default=_jsonable))


def cmd_report(cfg, paths=()):
    paths = list(paths) or list(cfg["trajectories"])
    if not paths:
        raise UsageError("report needs trajectory files (positional or the 'trajectories' key)")
    out = _outdir(cfg)
    rows, curves = [], []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise UsageError(f"file not found: {p}")
        traj = trainer.Trajectory.read_jsonl(p)
        if not len(traj):
            raise UsageError(f"{p}: empty trajectory")
        meta = {}
        for name in ("config.json",):
            if (p.parent / name).exists():
                meta = json.loads((p.parent / name).read_text())
        summary = {}
        if (p.parent / "summary.json").exists():
            summary = json.loads((p.parent / "summary.json").read_text())
        last = traj.records[-1]
        rows.append({
            "run": str(p), "seed": meta.get("seed", ""),
            "lambda": summary.get("final_lambda", last.lam),
            "dim": summary.get("final_dim", last.dim),
            "res": summary.get("final_res", last.res),
            "spa": last.spa, "iterations": last.iter,
        })
        for r in traj:
            rec = r.to_json()
            rec["run"] = str(p)
            curves.append(rec)
    _write_csv(out / "summary.csv", rows)
    _write_csv(out / "curves.csv", curves)
    print(f"wrote {len(rows)} summary rows and {len(curves)} curve rows to {out}")


def _write_csv(path, rows):
    cols = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


def build_parser():
    p = _Parser(prog="sparse-ot", description="Displacement-sparse neural optimal transport.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("paths", nargs="*", help="trajectory files for 'report'")
    p.add_argument("--config", "-c", help="JSON config file")
    p.add_argument("--set", "-s", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--verbose", "-v", action="store_true")
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        cfg = load_config(args.config, args.overrides)
        if args.paths and args.command != "report":
            raise UsageError(f"unexpected arguments: {args.paths}")
        if args.command == "report":
            cmd_report(cfg, args.paths)
        else:
            globals()[f"cmd_{args.command}"](cfg)
    except UsageError as e:
        print(f"sparse-ot: error: {e}", file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as e:
        print(f"sparse-ot: numerical abort: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, TypeError) as e:
        print(f"sparse-ot: error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
