"""Command-line driver: train, eval, oracle, sweep, gapdist.

Every command reads an optional JSON config, fills in defaults, validates the
result and writes it (resolved) into the output directory next to the seed,
a version string and the command's artifacts. Failures print one JSON line
``{"error": ..., "message": ...}`` on stderr and exit non-zero.
"""
from __future__ import annotations

import argparse
import copy
import io
import json
import logging
import os
import subprocess
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, evalkit, nnet, oracle
from .envproto import randomize_interactions, write_records
from .heavier import HeavierEnv
from .towers import TowersEnv
from .trainer import AgentPolicy, TrainConfig, train, write_curve

log = logging.getLogger("physprobe")

DEFAULTS = {
    "seed": 0,
    "out": "runs/default",
    "env": {
        "name": "heavier",
        "beta": 10.0,
        "actuator": "direct",
        "control_dt": 0.1,
        "physics_dt": 0.025,
        "timeout_steps": None,
    },
    "train": {k: v for k, v in TrainConfig().to_dict().items() if k != "seed"},
    "eval": {
        "budget": 10_000,
        "randomized": False,
        "dt_grid": list(evalkit.SWEEP_DTS),
        "sweep_episodes": 50,
        "timeout_mode": "real_time",
        "policy": "scan",
        "delta": 0.05,
    },
    "gapdist": {"betas": [3.0, 5.0, 10.0], "n": 10_000},
}

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
        "env": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["heavier", "towers"]},
                "beta": {"type": "number", "minimum": 1},
                "actuator": {"enum": ["direct", "fist"]},
                "control_dt": {"type": "number", "exclusiveMinimum": 0},
                "physics_dt": {"type": "number", "exclusiveMinimum": 0},
                "timeout_steps": {"anyOf": [_pos_int, {"type": "null"}]},
            },
        },
        "train": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "n_envs": _pos_int,
                "lr": _num,
                "rmsprop_decay": _num,
                "rmsprop_eps": _num,
                "entropy_coef": _num,
                "value_coef": _num,
                "grad_clip_norm": _num,
                "total_episodes": _pos_int,
                "embed_dim": {"type": "integer", "minimum": 0},
                "hidden": _pos_int,
                "ema_smoothing": _num,
                "lr_schedule": {"enum": ["constant", "linear"]},
            },
        },
        "eval": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "budget": {"type": "integer", "minimum": 0},
                "randomized": {"type": "boolean"},
                "dt_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                            "minItems": 1},
                "sweep_episodes": _pos_int,
                "timeout_mode": {"enum": ["real_time", "steps"]},
                "policy": {"enum": ["scan", "scan-all", "se"]},
                "delta": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "gapdist": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "betas": {"type": "array", "items": {"type": "number", "minimum": 1},
                          "minItems": 1},
                "n": {"type": "integer", "minimum": 10_000},
            },
        },
    },
}


class CliError(Exception):
    kind = "error"


class ConfigError(CliError):
    kind = "config"


class MissingCheckpoint(CliError):
    kind = "checkpoint"


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(raw: dict | None = None, seed: int | None = None,
                   out: str | None = None) -> dict:
    """Validate ``raw`` and fill every omitted key with its default."""
    raw = raw or {}
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = str(out)
    return cfg


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def version_string() -> str:
    """``git describe``-style version, falling back to the package version."""
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if res.returncode == 0 and res.stdout.strip():
            return f"{__version__}+g{res.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def atomic_write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise


def _text(writer, *args) -> str:
    buf = io.StringIO()
    writer(*args, buf)
    return buf.getvalue()


def _write_run_meta(out: Path, cfg: dict) -> None:
    atomic_write(out / "config.json", json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    atomic_write(out / "seed.txt", f"{cfg['seed']}\n")
    atomic_write(out / "VERSION", version_string() + "\n")


def make_env_factory(env_cfg: dict, control_dt: float | None = None,
                     timeout_steps: int | None = None):
    e = dict(env_cfg)
    if e["name"] == "heavier":
        kw = {"beta": float(e["beta"])}
        if e["timeout_steps"] is not None:
            kw["timeout_steps"] = e["timeout_steps"]
        return lambda: HeavierEnv(**kw)
    kw = {"actuator": e["actuator"], "control_dt": control_dt or e["control_dt"],
          "physics_dt": e["physics_dt"]}
    t = timeout_steps if timeout_steps is not None else e["timeout_steps"]
    if t is not None:
        kw["timeout_steps"] = t
    return lambda: TowersEnv(**kw)


def _condition(env_cfg: dict) -> dict:
    if env_cfg["name"] == "heavier":
        return {"env": "heavier", "beta": float(env_cfg["beta"])}
    return {"env": f"towers-{env_cfg['actuator']}", "control_dt": float(env_cfg["control_dt"])}


def _load_checkpoint(path: str | None) -> nnet.AgentParams:
    if not path:
        raise MissingCheckpoint("--checkpoint is required")
    if not Path(path).is_file():
        raise MissingCheckpoint(f"checkpoint not found: {path}")
    try:
        return nnet.load_params(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise MissingCheckpoint(f"unreadable checkpoint {path}: {exc}") from None


def _check_dims(params: nnet.AgentParams, env) -> None:
    if (params.obs_dim, params.n_actions) != (env.obs_dim, env.n_actions):
        raise ConfigError(
            f"checkpoint expects obs_dim={params.obs_dim}, n_actions={params.n_actions}; "
            f"env {env.name} has {env.obs_dim}, {env.n_actions}")


def _pool(threads: int):
    return ThreadPoolExecutor(threads) if threads > 1 else None


# -- commands -------------------------------------------------------------

def cmd_train(cfg: dict, threads: int = 1) -> Path:
    out = Path(cfg["out"])
    _write_run_meta(out, cfg)
    tcfg = TrainConfig(seed=cfg["seed"], **cfg["train"])
    factory = make_env_factory(cfg["env"])

    def progress(point, _params):
        if (point.episode_index // tcfg.n_envs) % 100 == 0:
            log.info("episodes=%d ema_success=%.3f mean_len=%.2f", point.episode_index,
                     point.ema_success, point.mean_episode_length)

    result = train(factory, tcfg, threads=threads, on_update=progress)
    with tempfile.TemporaryDirectory(dir=out) as tmp:
        ck = Path(tmp) / "params.ppck"
        nnet.save_params(result.params, ck)
        os.replace(ck, out / "params.ppck")
    atomic_write(out / "curve.csv", _text(write_curve, result.curve))
    return out


def _eval_outputs(cfg, policy, out: Path, threads: int, tag: dict) -> None:
    factory = make_env_factory(cfg["env"])
    randomized = cfg["eval"]["randomized"]
    if randomized:
        policy = randomize_interactions(policy)
    pool = _pool(threads)
    try:
        records = evalkit.eval_run(factory, policy, cfg["eval"]["budget"], cfg["seed"],
                                   pool=pool)
    finally:
        if pool is not None:
            pool.shutdown()
    for r in records:
        r.extra["randomized"] = randomized
    summary = evalkit.summarize(records, {**_condition(cfg["env"]), **tag,
                                          "randomized": randomized})
    atomic_write(out / "records.ndjson", _text(write_records, records))
    atomic_write(out / "summary.csv", _text(evalkit.write_summary_csv, [summary]))


def cmd_eval(cfg: dict, checkpoint: str | None, threads: int = 1) -> Path:
    params = _load_checkpoint(checkpoint)
    _check_dims(params, make_env_factory(cfg["env"])())
    out = Path(cfg["out"])
    _write_run_meta(out, cfg)
    _eval_outputs(cfg, AgentPolicy(params), out, threads, {"policy": "learned"})
    return out


ORACLES = {
    "scan": lambda e: oracle.scan_policy(),
    "scan-all": lambda e: oracle.scan_policy(early_stop=False),
    "se": lambda e: oracle.successive_elimination_policy(e["delta"]),
}


def cmd_oracle(cfg: dict, name: str | None = None, threads: int = 1) -> Path:
    name = name or cfg["eval"]["policy"]
    if name not in ORACLES:
        raise ConfigError(f"eval.policy: unknown oracle {name!r}")
    if cfg["env"]["name"] != "heavier":
        raise ConfigError("env.name: scripted oracles are defined for heavier only")
    cfg = _merge(cfg, {"eval": {"policy": name}})
    out = Path(cfg["out"])
    _write_run_meta(out, cfg)
    _eval_outputs(cfg, ORACLES[name](cfg["eval"]), out, threads, {"policy": name})
    return out


def cmd_sweep(cfg: dict, checkpoint: str | None, threads: int = 1) -> Path:
    params = _load_checkpoint(checkpoint)
    env_cfg = _merge(cfg["env"], {"name": "towers", "actuator": "fist"})
    _check_dims(params, make_env_factory(env_cfg)())
    out = Path(cfg["out"])
    _write_run_meta(out, cfg)
    ev = cfg["eval"]
    pool = _pool(threads)
    try:
        rows, per_dt = evalkit.control_dt_sweep(
            AgentPolicy(params),
            lambda dt, timeout: make_env_factory(env_cfg, dt, timeout)(),
            ev["dt_grid"], ev["sweep_episodes"], cfg["seed"], ev["timeout_mode"], pool=pool)
    finally:
        if pool is not None:
            pool.shutdown()
    records = []
    for dt, recs in per_dt.items():
        for r in recs:
            r.extra["control_dt"] = dt
            records.append(r)
    atomic_write(out / "sweep_records.ndjson", _text(write_records, records))
    atomic_write(out / "fig5.csv", _text(evalkit.write_fig5, rows))
    return out


def cmd_gapdist(cfg: dict) -> Path:
    out = Path(cfg["out"])
    _write_run_meta(out, cfg)
    rng = np.random.default_rng(cfg["seed"])
    dists = [oracle.gap_cdf(b, cfg["gapdist"]["n"], rng) for b in cfg["gapdist"]["betas"]]
    atomic_write(out / "fig1_right.csv", _text(oracle.write_gap_csv, dists))
    return out


# -- entry point ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (omitted keys take defaults)")
    common.add_argument("--seed", type=int, help="override config seed")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads; 1 is the deterministic reference mode")
    p = argparse.ArgumentParser(prog="physprobe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train an agent")
    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint")
    ev.add_argument("--randomized", action="store_true",
                    help="replace interactions with uniform random ones")
    orc = sub.add_parser("oracle", parents=[common], help="evaluate a scripted baseline")
    orc.add_argument("policy", nargs="?", choices=sorted(ORACLES))
    orc.add_argument("--randomized", action="store_true")
    sw = sub.add_parser("sweep", parents=[common], help="control time step sweep (fist)")
    sw.add_argument("--checkpoint")
    sub.add_parser("gapdist", parents=[common], help="mass-gap CDFs per beta")
    return p


def run(argv=None) -> Path:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg = resolve_config(load_config(args.config), args.seed, args.out)
    if getattr(args, "randomized", False):
        cfg["eval"]["randomized"] = True
    if args.command == "train":
        return cmd_train(cfg, args.threads)
    if args.command == "eval":
        return cmd_eval(cfg, args.checkpoint, args.threads)
    if args.command == "oracle":
        return cmd_oracle(cfg, args.policy, args.threads)
    if args.command == "sweep":
        return cmd_sweep(cfg, args.checkpoint, args.threads)
    return cmd_gapdist(cfg)


def main(argv=None) -> int:
    try:
        out = run(argv)
    except CliError as exc:
        print(json.dumps({"error": exc.kind, "message": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable report
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    print(json.dumps({"ok": True, "out": str(out)}))
    return 0
