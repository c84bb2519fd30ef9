"""Config-driven experiment runner.

Verbs: train, gof, power, ksd, ntk, sweep-split.  Each command is a pure
function of (config, seed) to its output files: rerunning writes
byte-identical CSV/JSON artifacts.  Configs are strict UTF-8 JSON ---
unknown keys anywhere are hard errors, because a silently ignored typo in
a schedule would invalidate an experiment.

Checkpoints store every float as 17-significant-digit decimal text, which
round-trips IEEE doubles exactly, so a reloaded critic reproduces forward
outputs bit for bit.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .critic import MlpCritic, default_div_mode
from .distributions import (GaussBernoulliRBM, GaussianMixture, OptimalCritic,
                            ScoreField, make_1d_pair, make_paper_mixture)
from .gof import GofConfig, estimate_power, null_pool, run_test
from .ksd import bandwidth_sweep, estimate_ksd_power
from .ntk import lazy_deviation
from .stein import WitnessBatch
from .training import (AdaptiveSchedule, FixedSchedule, StagedSchedule,
                       TrainConfig, train)

__all__ = ["main", "ConfigError", "load_config", "save_checkpoint",
           "load_checkpoint"]


class ConfigError(ValueError):
    pass


def _fmt(x):
    return format(float(x), ".17g")


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "" if math.isnan(v) else _fmt(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")


def _json_safe(x):
    """Replace non-finite floats with None so the JSON stays standard."""
    if isinstance(x, dict):
        return {k: _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, (float, np.floating)) and not math.isfinite(x):
        return None
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def _write_json(path, obj):
    with open(path, "w", newline="") as fh:
        json.dump(_json_safe(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, critic, lam=math.nan, interval=-1, monitor=math.nan,
                    seed_lineage=""):
    obj = {
        "format": "steincritic-checkpoint-v1",
        "d": critic.d,
        "h": critic.h,
        "activation": "swish",
        "packing": "W1,b1,W2,b2,W3,b3 row-major",
        "lambda": _fmt(lam),
        "interval": int(interval),
        "monitor": _fmt(monitor),
        "seed_lineage": seed_lineage,
        "params": [_fmt(v) for v in critic.params],
    }
    _write_json(path, obj)


def load_checkpoint(path):
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("format") != "steincritic-checkpoint-v1":
        raise ConfigError(f"{path} is not a recognized checkpoint")
    params = np.array([float(v) for v in obj["params"]])
    critic = MlpCritic(obj["d"], obj["h"], params)
    meta = {
        "lambda": float(obj["lambda"]),
        "interval": obj["interval"],
        "monitor": float(obj["monitor"]),
        "seed_lineage": obj["seed_lineage"],
    }
    return critic, meta


# -- config parsing --------------------------------------------------------------


def _check_keys(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    unknown = set(obj) - set(allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _require(obj, key, path):
    if key not in obj:
        raise ConfigError(f"{path}: missing required key {key!r}")
    return obj[key]


_TOP_KEYS = ("seed", "out", "distribution", "net", "train", "schedule",
             "gof", "power", "ksd", "ntk", "sweep")


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from err
    return parse_config(raw)


def parse_config(raw):
    """Validate and fill defaults; returns a plain JSON-ready dict."""
    _check_keys(raw, _TOP_KEYS, "config")
    out = {
        "seed": int(raw.get("seed", 0)),
        "out": raw.get("out"),
        "distribution": _parse_distribution(raw.get("distribution")),
        "net": _parse_net(raw.get("net")),
        "train": _parse_train(raw.get("train")),
        "schedule": _parse_schedule(raw.get("schedule")),
        "gof": _parse_gof(raw.get("gof")),
        "power": _parse_power(raw.get("power")),
        "ksd": _parse_ksd(raw.get("ksd")),
        "ntk": _parse_ntk(raw.get("ntk")),
        "sweep": _parse_sweep(raw.get("sweep")),
    }
    return out


def _parse_distribution(obj):
    if obj is None:
        return None
    kind = _require(obj, "kind", "distribution")
    if kind == "paper_mixture":
        _check_keys(obj, ("kind", "d", "rho1", "omega"), "distribution")
        return {
            "kind": kind,
            "d": int(_require(obj, "d", "distribution")),
            "rho1": float(obj.get("rho1", 0.5)),
            "omega": float(obj.get("omega", 0.8)),
        }
    if kind == "mixture_1d":
        _check_keys(obj, ("kind",), "distribution")
        return {"kind": kind}
    if kind == "gaussian_mixture":
        _check_keys(obj, ("kind", "p", "q"), "distribution")
        spec = {"kind": kind}
        for side in ("p", "q"):
            sub = _require(obj, side, "distribution")
            _check_keys(sub, ("weights", "means", "covariances"),
                        f"distribution.{side}")
            spec[side] = {
                "weights": sub["weights"],
                "means": sub["means"],
                "covariances": sub["covariances"],
            }
        return spec
    if kind == "rbm":
        _check_keys(obj, ("kind", "p", "q", "n_gibbs"), "distribution")
        spec = {"kind": kind, "n_gibbs": int(obj.get("n_gibbs", 200))}
        for side in ("p", "q"):
            sub = _require(obj, side, "distribution")
            _check_keys(sub, ("coupling", "visible_bias", "hidden_bias"),
                        f"distribution.{side}")
            spec[side] = {
                "coupling": sub["coupling"],
                "visible_bias": sub["visible_bias"],
                "hidden_bias": sub["hidden_bias"],
            }
        return spec
    raise ConfigError(f"distribution: unknown kind {kind!r}")


def _parse_net(obj):
    if obj is None:
        return {"width": 512}
    _check_keys(obj, ("width",), "net")
    width = int(obj.get("width", 512))
    if width < 1:
        raise ConfigError("net.width must be positive")
    return {"width": width}


def _parse_train(obj):
    defaults = {
        "n_tr": 2000, "batch_size": 200, "lr": 1e-3, "epochs": 60,
        "n_val": None, "b_w": None, "div_mode": "auto", "n_probes": 1,
        "optimizer": "adam", "n_te": 2000,
    }
    if obj is None:
        return dict(defaults)
    _check_keys(obj, tuple(defaults), "train")
    out = dict(defaults)
    out.update(obj)
    out["n_tr"] = int(out["n_tr"])
    out["batch_size"] = int(out["batch_size"])
    out["epochs"] = int(out["epochs"])
    out["lr"] = float(out["lr"])
    out["n_te"] = int(out["n_te"])
    out["n_probes"] = int(out["n_probes"])
    if out["n_val"] is not None:
        out["n_val"] = int(out["n_val"])
    if out["b_w"] is not None:
        out["b_w"] = int(out["b_w"])
    return out


def _parse_schedule(obj):
    if obj is None:
        return None
    kind = _require(obj, "kind", "schedule")
    if kind == "fixed":
        _check_keys(obj, ("kind", "lambda"), "schedule")
        return {"kind": kind, "lambda": float(_require(obj, "lambda", "schedule"))}
    if kind in ("staged", "adaptive"):
        _check_keys(obj, ("kind", "lambda_init", "lambda_term", "beta"),
                    "schedule")
        return {
            "kind": kind,
            "lambda_init": float(_require(obj, "lambda_init", "schedule")),
            "lambda_term": float(_require(obj, "lambda_term", "schedule")),
            "beta": float(_require(obj, "beta", "schedule")),
        }
    raise ConfigError(f"schedule: unknown kind {kind!r}")


def _parse_gof(obj):
    defaults = {"n_gof": 100, "alpha": 0.05, "n_boot": 500, "r_pool": 50,
                "reuse_pool": True}
    if obj is None:
        return dict(defaults)
    _check_keys(obj, tuple(defaults), "gof")
    out = dict(defaults)
    out.update(obj)
    out["n_gof"] = int(out["n_gof"])
    out["n_boot"] = int(out["n_boot"])
    out["r_pool"] = int(out["r_pool"])
    out["alpha"] = float(out["alpha"])
    out["reuse_pool"] = bool(out["reuse_pool"])
    return out


def _parse_power(obj):
    defaults = {"n_run": 500, "n_replica": 10}
    if obj is None:
        return dict(defaults)
    _check_keys(obj, tuple(defaults), "power")
    out = dict(defaults)
    out.update(obj)
    out["n_run"] = int(out["n_run"])
    out["n_replica"] = int(out["n_replica"])
    if out["n_run"] < 1:
        raise ConfigError("power.n_run must be at least 1")
    if out["n_replica"] < 1:
        raise ConfigError("power.n_replica must be at least 1")
    return out


def _parse_ksd(obj):
    defaults = {"n_gof": 200, "alpha": 0.05, "n_boot": 500, "n_run": 100,
                "n_replica": 5, "delta_grid": None}
    if obj is None:
        return dict(defaults)
    _check_keys(obj, tuple(defaults), "ksd")
    out = dict(defaults)
    out.update(obj)
    for key in ("n_gof", "n_boot", "n_run", "n_replica"):
        out[key] = int(out[key])
        if out[key] < 1:
            raise ConfigError(f"ksd.{key} must be at least 1")
    out["alpha"] = float(out["alpha"])
    if out["delta_grid"] is not None:
        out["delta_grid"] = [float(v) for v in out["delta_grid"]]
        if not out["delta_grid"]:
            raise ConfigError("ksd.delta_grid must be nonempty when given")
    return out


def _parse_ntk(obj):
    defaults = {"n": 200, "width": 64, "lambda_grid": [0.5, 2.0, 8.0],
                "c": 1.0, "eta_factor": 1e-3, "seeds": [0, 1, 2, 3, 4]}
    if obj is None:
        return dict(defaults)
    _check_keys(obj, tuple(defaults), "ntk")
    out = dict(defaults)
    out.update(obj)
    out["n"] = int(out["n"])
    out["width"] = int(out["width"])
    out["lambda_grid"] = [float(v) for v in out["lambda_grid"]]
    out["c"] = float(out["c"])
    out["eta_factor"] = float(out["eta_factor"])
    out["seeds"] = [int(s) for s in out["seeds"]]
    if not out["lambda_grid"]:
        raise ConfigError("ntk.lambda_grid must be nonempty")
    return out


def _parse_sweep(obj):
    defaults = {"n_sample": 500, "fractions": [0.1 * k for k in range(1, 10)],
                "n_run": 100, "n_replica": 3}
    if obj is None:
        return dict(defaults)
    _check_keys(obj, tuple(defaults), "sweep")
    out = dict(defaults)
    out.update(obj)
    out["n_sample"] = int(out["n_sample"])
    out["n_run"] = int(out["n_run"])
    out["n_replica"] = int(out["n_replica"])
    fractions = [float(f) for f in out["fractions"]]
    for f in fractions:
        if not (0.0 < f < 1.0):
            raise ConfigError(f"sweep.fractions: {f} is not inside (0, 1)")
    out["fractions"] = fractions
    if out["n_run"] < 1 or out["n_replica"] < 1:
        raise ConfigError("sweep.n_run and sweep.n_replica must be at least 1")
    return out


# -- builders ----------------------------------------------------------------------


def build_distributions(spec):
    """Return (p_field, q_field, f_star) from a distribution spec."""
    if spec is None:
        raise ConfigError("this command needs a 'distribution' section")
    kind = spec["kind"]
    if kind == "paper_mixture":
        p, q = make_paper_mixture(spec["d"], spec["rho1"], spec["omega"])
    elif kind == "mixture_1d":
        p, q = make_1d_pair()
    elif kind == "gaussian_mixture":
        p = GaussianMixture(**spec["p"])
        q = GaussianMixture(**spec["q"])
    elif kind == "rbm":
        n_gibbs = spec["n_gibbs"]
        p = _rbm_field(GaussBernoulliRBM(**spec["p"]), n_gibbs, "p")
        q = _rbm_field(GaussBernoulliRBM(**spec["q"]), n_gibbs, "q")
        return p, q, OptimalCritic(p, q)
    else:  # pragma: no cover - parse_config already rejects this
        raise ConfigError(f"unknown distribution kind {kind!r}")
    p_field = ScoreField.from_distribution(p, "p")
    q_field = ScoreField.from_distribution(q, "q")
    return p_field, q_field, OptimalCritic(p_field, q_field)


def _rbm_field(rbm, n_gibbs, name):
    return ScoreField(
        dim=rbm.d,
        score_fn=rbm.score,
        sample_fn=lambda n, rng: rbm.sample(n, rng, n_gibbs=n_gibbs),
        log_density_fn=rbm.log_density if rbm.has_log_density else None,
        score_div_fn=rbm.score_div,
        name=name,
    )


def build_schedule(spec):
    if spec is None:
        raise ConfigError("this command needs a 'schedule' section")
    if spec["kind"] == "fixed":
        return FixedSchedule(spec["lambda"])
    cls = StagedSchedule if spec["kind"] == "staged" else AdaptiveSchedule
    return cls(spec["lambda_init"], spec["lambda_term"], spec["beta"])


def build_train_config(cfg, n_tr=None, batch_size=None):
    t = cfg["train"]
    return TrainConfig(
        n_tr=n_tr if n_tr is not None else t["n_tr"],
        schedule=build_schedule(cfg["schedule"]),
        width=cfg["net"]["width"],
        batch_size=batch_size if batch_size is not None else t["batch_size"],
        lr=t["lr"],
        epochs=t["epochs"],
        n_val=t["n_val"],
        b_w=t["b_w"],
        div_mode=t["div_mode"],
        n_probes=t["n_probes"],
        optimizer=t["optimizer"],
        seed=cfg["seed"],
        n_te=t["n_te"],
    )


def build_gof_config(cfg, dim=None):
    g = cfg["gof"]
    div_mode = "exact" if dim is None else default_div_mode(dim)
    return GofConfig(
        n_gof=g["n_gof"], alpha=g["alpha"], n_boot=g["n_boot"],
        r_pool=g["r_pool"], reuse_pool_across_runs=g["reuse_pool"],
        div_mode=div_mode,
    )


# -- commands ---------------------------------------------------------------------


def cmd_train(cfg, out_dir, threads=1):
    p_field, q_field, f_star = build_distributions(cfg["distribution"])
    tconf = build_train_config(cfg)
    rng = np.random.default_rng(cfg["seed"])
    data = p_field.sample(tconf.n_tr, rng)
    report = train(data, q_field, tconf, rng, f_star=f_star)

    rows = [
        (r.interval, r.epoch, r.lam, r.monitor, r.mse_q, r.sd)
        for r in report.records
    ]
    write_csv(os.path.join(out_dir, "curves.csv"),
              ("interval", "epoch", "lambda", "monitor", "mse_q", "sd"), rows)
    lineage = f"seed={cfg['seed']}"
    if report.best_params is not None:
        save_checkpoint(os.path.join(out_dir, "model_best.json"),
                        report.best_critic(), report.best_lam,
                        report.best_interval, report.best_monitor, lineage)
    if report.final_params is not None:
        save_checkpoint(os.path.join(out_dir, "model_final.json"),
                        report.final_critic(), report.final_lam,
                        len(report.records) - 1,
                        report.records[-1].monitor if report.records else math.nan,
                        lineage)
    result = {
        "best_monitor": report.best_monitor,
        "best_interval": report.best_interval,
        "best_lambda": report.best_lam,
        "intervals": len(report.records),
        "epochs": cfg["train"]["epochs"],
        "diverged": report.diverged,
        "divergence_note": report.divergence_note,
        "config": cfg,
    }
    _write_json(os.path.join(out_dir, "result.json"), result)
    if report.diverged:
        _fail(3, "training diverged (non-finite loss)",
              {"divergence_note": report.divergence_note})
    return 0


def cmd_gof(cfg, out_dir, threads=1):
    p_field, q_field, f_star = build_distributions(cfg["distribution"])
    tconf = build_train_config(cfg)
    gconf = build_gof_config(cfg, dim=p_field.dim)
    rng = np.random.default_rng(cfg["seed"])
    data = p_field.sample(tconf.n_tr, rng)
    report = train(data, q_field, tconf, rng)
    if report.diverged:
        _fail(3, "training diverged (non-finite loss)",
              {"divergence_note": report.divergence_note})
    critic = report.best_critic()
    p_test = p_field.sample(gconf.n_gof, rng)
    pool = null_pool(critic, q_field, q_field, gconf.n_pool, rng)
    outcome = run_test(critic, q_field, p_test, q_field, gconf, rng, pool=pool)
    WitnessBatch.evaluate(
        critic, q_field, p_test, sample_set="p-test", checkpoint="model_best",
    ).to_csv(os.path.join(out_dir, "witness.csv"))
    _write_json(os.path.join(out_dir, "test.json"), {
        "statistic": outcome.statistic,
        "threshold": outcome.threshold,
        "reject": outcome.reject,
        "n_gof": gconf.n_gof,
        "alpha": gconf.alpha,
        "config": cfg,
    })
    return 0


def cmd_power(cfg, out_dir, threads=1):
    p_field, q_field, _ = build_distributions(cfg["distribution"])
    tconf = build_train_config(cfg)
    gconf = build_gof_config(cfg, dim=p_field.dim)
    n_run = cfg["power"]["n_run"]
    n_replica = cfg["power"]["n_replica"]
    result = estimate_power(p_field, q_field, tconf, gconf, n_run, n_replica,
                            seed=cfg["seed"], threads=threads)
    rows = [
        (k, result.powers[k], n_run, gconf.n_gof, gconf.alpha,
         result.schedule_id)
        for k in range(n_replica)
    ]
    write_csv(os.path.join(out_dir, "power.csv"),
              ("replica", "power", "n_run", "n_gof", "alpha", "schedule_id"),
              rows)
    _write_json(os.path.join(out_dir, "power_summary.json"), {
        "power_mean": result.mean,
        "power_std": result.std,
        "n_failed": result.n_failed,
        "schedule_id": result.schedule_id,
        "config": cfg,
    })
    return 0


def cmd_ksd(cfg, out_dir, threads=1):
    # wall-clock timings live in their own file so the statistical CSVs stay
    # byte-identical across reruns
    p_field, q_field, _ = build_distributions(cfg["distribution"])
    k = cfg["ksd"]
    header = ("delta", "power_mean", "power_std", "sigma", "gamma")
    t_header = ("delta", "stat_time", "boot_time")

    rows, _ = bandwidth_sweep(
        p_field, q_field, [1.0], k["n_gof"], k["alpha"], k["n_boot"],
        k["n_run"], k["n_replica"], seed=cfg["seed"])
    write_csv(os.path.join(out_dir, "ksd.csv"), header,
              [_sweep_row(r) for r in rows])
    timing_rows = [_timing_row(r) for r in rows]

    summary = {"median_heuristic_power": rows[0].power_mean, "config": cfg}
    if k["delta_grid"] is not None:
        srows, best = bandwidth_sweep(
            p_field, q_field, k["delta_grid"], k["n_gof"], k["alpha"],
            k["n_boot"], k["n_run"], k["n_replica"], seed=cfg["seed"])
        write_csv(os.path.join(out_dir, "ksd_sweep.csv"), header,
                  [_sweep_row(r) for r in srows])
        timing_rows.extend(_timing_row(r) for r in srows)
        summary["best_delta"] = best
    write_csv(os.path.join(out_dir, "ksd_timing.csv"), t_header, timing_rows)
    _write_json(os.path.join(out_dir, "ksd_result.json"), summary)
    return 0


def _sweep_row(r):
    return (r.delta, r.power_mean, r.power_std, r.sigma_mean, r.gamma_mean)


def _timing_row(r):
    return (r.delta, r.stat_time, r.boot_time)


def cmd_ntk(cfg, out_dir, threads=1):
    spec = cfg["ntk"]
    dist = cfg["distribution"]
    p = q = None
    d = None
    if dist is not None:
        p_field, q_field, _ = build_distributions(dist)
        p, q = p_field, q_field
        d = p_field.dim
    if d is None:
        raise ConfigError("cmd ntk needs a 'distribution' section")
    reports = lazy_deviation(
        width=spec["width"], n=spec["n"], d=d,
        lam_grid=spec["lambda_grid"], c=spec["c"], seeds=spec["seeds"],
        p=p, q=q, eta_factor=spec["eta_factor"])
    rows = []
    for rep in reports:
        for t, dev, verr in zip(rep.times, rep.dev_rel, rep.ubar_err):
            rows.append((rep.lam, t, dev, verr, rep.seed, rep.width, rep.n))
    write_csv(os.path.join(out_dir, "lazy.csv"),
              ("lambda", "t", "dev_rel", "ubar_err", "seed", "width", "n"),
              rows)
    _write_json(os.path.join(out_dir, "ntk_result.json"), {
        "final_dev_by_lambda": _median_final(reports),
        "config": cfg,
    })
    return 0


def _median_final(reports):
    by_lam = {}
    for rep in reports:
        by_lam.setdefault(rep.lam, []).append(rep.final_dev())
    return {str(lam): float(np.median(v)) for lam, v in sorted(by_lam.items())}


def cmd_sweep_split(cfg, out_dir, threads=1):
    p_field, q_field, _ = build_distributions(cfg["distribution"])
    sw = cfg["sweep"]
    g = cfg["gof"]
    rows = []
    for frac in sw["fractions"]:
        n_tr = int(round(frac * sw["n_sample"]))
        n_gof = sw["n_sample"] - n_tr
        if n_tr < 2 or n_gof < 1:
            raise ConfigError(
                f"sweep fraction {frac} leaves too few samples on one side")
        tconf = build_train_config(cfg, n_tr=n_tr)
        gconf = GofConfig(n_gof=n_gof, alpha=g["alpha"], n_boot=g["n_boot"],
                          r_pool=g["r_pool"],
                          reuse_pool_across_runs=g["reuse_pool"],
                          div_mode=default_div_mode(p_field.dim))
        result = estimate_power(p_field, q_field, tconf, gconf, sw["n_run"],
                                sw["n_replica"], seed=cfg["seed"],
                                threads=threads)
        rows.append((frac, n_tr, n_gof, result.mean, result.std))
    write_csv(os.path.join(out_dir, "split_power.csv"),
              ("fraction", "n_tr", "n_gof", "power_mean", "power_std"), rows)
    _write_json(os.path.join(out_dir, "sweep_result.json"), {"config": cfg})
    return 0


# -- entry point --------------------------------------------------------------------


class _CommandFailure(Exception):
    def __init__(self, code, message, extra=None):
        super().__init__(message)
        self.code = code
        self.payload = {"error": message, **(extra or {})}


def _fail(code, message, extra=None):
    raise _CommandFailure(code, message, extra)


_COMMANDS = {
    "train": cmd_train,
    "gof": cmd_gof,
    "power": cmd_power,
    "ksd": cmd_ksd,
    "ntk": cmd_ntk,
    "sweep-split": cmd_sweep_split,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="steincritic",
        description="Neural Stein critic experiments: training, GoF testing, "
                    "KSD baseline, NTK lazy-training lab.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="path to a JSON config")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap for replica-level parallelism")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as err:
        print(json.dumps({"error": str(err)}), file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg["seed"] = int(args.seed)
    out_dir = args.out or cfg.get("out") or "."
    os.makedirs(out_dir, exist_ok=True)

    try:
        return _COMMANDS[args.command](cfg, out_dir, threads=max(1, args.threads))
    except _CommandFailure as err:
        print(json.dumps(err.payload), file=sys.stderr)
        return err.code
    except ConfigError as err:
        print(json.dumps({"error": str(err)}), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
