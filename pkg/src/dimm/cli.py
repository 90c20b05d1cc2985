"""Command-line front end: generate | train | eval | ablate | dump-weights | reproduce.

Every command writes a JSON run manifest holding the argv, full config,
seeds, input hashes, package version and resulting metrics.
``dimm reproduce --manifest M`` re-executes the recorded command and checks
that every metric comes out bit-identical.

Exit codes: 0 success, 2 usage, 3 data, 4 numerical failure, 5 a reproduced
run that does not match its manifest.

``DIMM_NUM_THREADS`` caps the BLAS/OpenMP/numba thread pools; it is applied
before numpy is imported.
"""

from __future__ import annotations

import os

_THREADS = os.environ.get("DIMM_NUM_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ.setdefault(_var, _THREADS)

import argparse  # noqa: E402
import csv  # noqa: E402
import hashlib  # noqa: E402
import json  # noqa: E402
import logging  # noqa: E402
import shlex  # noqa: E402
import sys  # noqa: E402
import tempfile  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402
from ._jit import backend_name  # noqa: E402
from .errors import DataFormatError, DimmError, DivergenceError, IllConditionedError  # noqa: E402
from .errors import TrainingAborted  # noqa: E402

log = logging.getLogger("dimm")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4, 5
BASELINES = ("kf_cv", "kf_ca", "kf_cj", "imm", "dimm_uniform", "dimm")
MODEL_NAMES = ("CV", "CA", "CJ")


class UsageError(DimmError):
    pass


# -- helpers ---------------------------------------------------------------

def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_config(path, allowed) -> dict:
    """JSON object with keys restricted to ``allowed``; no path means ``{}``."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be an object")
    bad = sorted(set(cfg) - set(allowed))
    if bad:
        raise UsageError(f"{path}: invalid config keys: {', '.join(bad)} "
                         f"(allowed: {', '.join(sorted(allowed))})")
    return cfg


def _read_trajs(path):
    from .datagen import read_dataset
    if path is None:
        raise UsageError("--dataset is required")
    if not Path(path).is_file():
        raise UsageError(f"dataset not found: {path}")
    trajs = read_dataset(path)
    if not trajs:
        raise DataFormatError(f"{path}: dataset holds no trajectories")
    return trajs


def write_manifest(path, args, config, seeds, inputs, metrics, outputs=None):
    man = {
        "command": args.command,
        "argv": [a for a in args.argv],
        "config": config,
        "seeds": seeds,
        "inputs": {str(Path(p).resolve()): file_sha256(p) for p in inputs},
        "version": f"dimm {__version__} ({backend_name()} kernels, numpy {np.__version__})",
        "metrics": metrics,
        "outputs": outputs or {},
    }
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    return man


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError("--out is required")
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _bank_cfg(d):
    from .agent import BankConfig
    try:
        return BankConfig.from_dict(d or {})
    except (TypeError, ValueError) as e:
        raise UsageError(f"bank config: {e}") from None


def _td3_cfg(d, args):
    from .agent import Td3Config
    d = dict(d or {})
    if getattr(args, "seed", None) is not None:
        d["seed"] = args.seed
    if getattr(args, "reward", None) is not None:
        d["reward"] = args.reward
    if getattr(args, "action_bound", None) is not None:
        d["action_bound"] = args.action_bound
    try:
        return Td3Config.from_dict(d)
    except (TypeError, ValueError) as e:
        raise UsageError(f"td3 config: {e}") from None


# -- generate --------------------------------------------------------------

def cmd_generate(args):
    from .datagen import GenConfig, generate_dataset, lorenz_trajectory, write_dataset
    cfg = load_config(args.config, {"generator", "n_trajectories", "gen", "lorenz"})
    if args.out is None:
        raise UsageError("--out is required")
    seed = 0 if args.seed is None else args.seed
    n = int(cfg.get("n_trajectories", 20))
    kind = cfg.get("generator", "multi_model")
    if kind == "multi_model":
        try:
            gen = GenConfig.from_dict(cfg.get("gen", {}))
        except (TypeError, ValueError) as e:
            raise UsageError(f"gen config: {e}") from None
        trajs = generate_dataset(gen, n, seed)
        snapshot = {"generator": kind, "n_trajectories": n, "gen": gen.to_dict()}
    elif kind == "lorenz":
        lz = {"x0": [1.0, 1.0, 1.0], "dt": 0.01, "steps": 500, "sigma_meas": 1.0,
              **cfg.get("lorenz", {})}
        rng = np.random.default_rng(seed)
        trajs = []
        for s in np.random.SeedSequence(seed).generate_state(n):
            x0 = np.asarray(lz["x0"], float) + rng.normal(0.0, 1.0, 3)
            trajs.append(lorenz_trajectory(x0, lz["dt"], lz["steps"], lz["sigma_meas"], int(s)))
        snapshot = {"generator": kind, "n_trajectories": n, "lorenz": lz}
    else:
        raise UsageError(f"unknown generator {kind!r} (multi_model or lorenz)")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(trajs, out)
    digest = file_sha256(out)
    inputs = [args.config] if args.config else []
    write_manifest(str(out) + ".manifest.json", args, snapshot, {"seed": seed}, inputs,
                   {"dataset_sha256": digest, "n_trajectories": len(trajs)})
    print(f"wrote {len(trajs)} trajectories to {out} (sha256 {digest[:16]})")
    return EXIT_OK


# -- train -----------------------------------------------------------------

TRAIN_KEYS = {"td3", "bank", "episodes", "val_count"}


def _split_val(trajs, val_count):
    if val_count <= 0 or val_count >= len(trajs):
        raise UsageError(f"val_count={val_count} must leave training data ({len(trajs)} trajectories)")
    return trajs[:-val_count], trajs[-val_count:]


def run_training(trajs, cfg, td3, bank, out: Path):
    """Train, write checkpoint and curves into ``out``; returns (result, metrics)."""
    from .agent import prepare_tracks, save_actor, train
    tr, va = _split_val(trajs, int(cfg.get("val_count", 8)))
    episodes = int(cfg.get("episodes", 320))
    train_tracks = prepare_tracks(tr, bank, td3.window)
    val_tracks = prepare_tracks(va, bank, td3.window)
    res = train(train_tracks, td3, episodes, bank, val_tracks, abort_dir=out,
                progress=lambda d: log.info("episodes %(episodes)d  val MSE %(val_mse).4f", d))
    ckpt = out / "actor.ckpt"
    save_actor(ckpt, res.agent, {"best_val_mse": res.best_val, "best_episode": res.best_episode})
    with open(out / "reward_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "reward"])
        for i, r in enumerate(res.reward_curve):
            w.writerow([i, repr(float(r))])
    with open(out / "val_curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episodes", "val_mse"])
        for e, m in res.val_curve:
            w.writerow([e, repr(float(m))])
    tail = res.reward_curve[-max(1, len(res.reward_curve) // 10):]
    metrics = {"best_val_mse": res.best_val, "best_episode": res.best_episode,
               "final_tenth_mean_reward": float(np.mean(tail)), "n_updates": res.n_updates,
               "checkpoint_sha256": file_sha256(ckpt)}
    return res, metrics


def cmd_train(args):
    cfg = load_config(args.config, TRAIN_KEYS)
    trajs = _read_trajs(args.dataset)
    td3 = _td3_cfg(cfg.get("td3"), args)
    bank = _bank_cfg(cfg.get("bank"))
    out = _out_dir(args)
    _, metrics = run_training(trajs, cfg, td3, bank, out)
    snapshot = {"td3": td3.to_dict(), "bank": bank.to_dict(),
                "episodes": int(cfg.get("episodes", 320)), "val_count": int(cfg.get("val_count", 8))}
    write_manifest(out / "manifest.json", args, snapshot, {"seed": td3.seed}, [args.dataset]
                   + ([args.config] if args.config else []), metrics,
                   {"checkpoint": "actor.ckpt", "reward_curve": "reward_curve.csv"})
    print(f"best validation MSE {metrics['best_val_mse']:.6g}; checkpoint {out / 'actor.ckpt'}")
    return EXIT_OK


# -- eval ------------------------------------------------------------------

def baseline_estimates(name, trajs, bank, checkpoint=None, L=None):
    """Per-trajectory (T, 3) position estimates for a named method."""
    from .agent import make_track, rollout
    from .agent.td3 import agent_policy, load_actor, uniform_policy
    if name not in BASELINES:
        raise UsageError(f"unknown baseline {name!r}; valid options: {', '.join(BASELINES)}")
    actor = None
    if name == "dimm":
        if checkpoint is None:
            raise UsageError("baseline 'dimm' needs --checkpoint")
        actor, meta = load_actor(checkpoint)
        L = actor.shape.window
        bank = _bank_cfg(meta["bank"])
    L = 10 if L is None else L
    tracks = [make_track(t, bank, L) for t in trajs]
    if name.startswith("kf_"):
        i = MODEL_NAMES.index(name[3:].upper())
        return [t.bank[:, i] for t in tracks], tracks
    if name == "imm":
        return [t.imm for t in tracks], tracks
    if name == "dimm_uniform":
        ro = rollout(uniform_policy, tracks, L, 5.0)
    else:
        ro = rollout(agent_policy(actor, meta["feature_scale"]), tracks, L,
                     actor.shape.action_bound)
    return ro.fused, tracks


def cmd_eval(args):
    from .metrics import MetricReport
    cfg = load_config(args.config, {"bank", "warmup"})
    trajs = _read_trajs(args.dataset)
    name = args.baseline or ("dimm" if args.checkpoint else None)
    if name is None:
        raise UsageError("give --baseline NAME or --checkpoint PATH")
    bank = _bank_cfg(cfg.get("bank"))
    est, tracks = baseline_estimates(name, trajs, bank, args.checkpoint)
    rep = MetricReport(name, **({"warmup": int(cfg["warmup"])} if "warmup" in cfg else {}))
    for i, (t, e) in enumerate(zip(tracks, est)):
        rep.add(i, t.truth, e)
    out = _out_dir(args)
    rep.write_csv(out / "metrics.csv")
    inputs = [args.dataset] + [p for p in (args.checkpoint, args.config) if p]
    metrics = {**rep.summary(), "per_trajectory": [[r[0], r[1], r[2]] for r in rep.rows]}
    write_manifest(out / "manifest.json", args, {"bank": bank.to_dict(), "warmup": rep.warmup,
                                                  "baseline": name}, {}, inputs, metrics,
                   {"metrics": "metrics.csv"})
    print(f"# {rep.header()}")
    print(f"{name}: MSE {rep.mse:.6g}  MAE {rep.mae:.6g}  over {len(rep.rows)} trajectories")
    return EXIT_OK


# -- ablate ----------------------------------------------------------------

def cmd_ablate(args):
    from .agent import Td3Config, prepare_tracks, train
    from .agent.td3 import agent_policy, rollout, uniform_policy
    from .datagen import read_dataset
    from .metrics import mse_mae
    cfg = load_config(args.config, TRAIN_KEYS | {"grid", "seeds", "test_dataset"})
    trajs = _read_trajs(args.dataset)
    grid = cfg.get("grid")
    if not grid:
        raise UsageError("ablation grid is empty")
    bounds = grid.get("action_bound", [5.0])
    rewards = grid.get("reward", ["hierarchical"])
    dafn = grid.get("dafn", ["on"])
    if not bounds or not rewards or not dafn:
        raise UsageError("ablation grid is empty")
    for b in bounds:
        if not 1 <= float(b) <= 5:
            raise UsageError(f"action_bound {b} outside 1..5")
    for d in dafn:
        if d not in ("on", "off"):
            raise UsageError(f"dafn must be on/off, got {d!r}")
    seeds = cfg.get("seeds", [0 if args.seed is None else args.seed])
    test_path = cfg.get("test_dataset")
    if test_path is None:
        raise UsageError("ablation config needs test_dataset")
    test = read_dataset(test_path)
    bank = _bank_cfg(cfg.get("bank"))
    base = dict(cfg.get("td3", {}))
    tr, va = _split_val(trajs, int(cfg.get("val_count", 8)))
    episodes = int(cfg.get("episodes", 320))
    rows = []
    cache = {}
    for b in bounds:
        for rw in rewards:
            for d in dafn:
                for s in seeds:
                    td3 = Td3Config.from_dict({**base, "action_bound": float(b), "reward": rw,
                                               "seed": int(s)})
                    L = td3.window
                    if L not in cache:
                        cache[L] = (prepare_tracks(tr, bank, L), prepare_tracks(va, bank, L),
                                    prepare_tracks(test, bank, L))
                    trt, vat, tet = cache[L]
                    if d == "off":
                        ro = rollout(uniform_policy, tet, L, td3.action_bound)
                    else:
                        res = train(trt, td3, episodes, bank, vat)
                        ro = rollout(agent_policy(res.agent), tet, L, td3.action_bound)
                    errs = [mse_mae(t.truth, f) for t, f in zip(tet, ro.fused)]
                    rows.append({"action_bound": float(b), "reward": rw, "dafn": d, "seed": int(s),
                                 "mse": float(np.mean([e[0] for e in errs])),
                                 "mae": float(np.mean([e[1] for e in errs]))})
                    log.info("ablation cell %s", rows[-1])
    out = _out_dir(args)
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, ["action_bound", "reward", "dafn", "seed", "mse", "mae"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "mse": repr(r["mse"]), "mae": repr(r["mae"])})
    write_manifest(out / "manifest.json", args, {**cfg, "bank": bank.to_dict()},
                   {"seeds": seeds}, [args.dataset, test_path] + ([args.config] if args.config else []),
                   {"rows": rows}, {"table": "ablation.csv"})
    for r in rows:
        print(r)
    return EXIT_OK


# -- dump-weights ----------------------------------------------------------

def dump_weights(trajs, checkpoint, steps=None, trajectory=None):
    """Rows of (trajectory, step, nine weights, per-axis argmax label)."""
    from .agent import make_track, rollout
    from .agent.td3 import agent_policy, load_actor
    actor, meta = load_actor(checkpoint)
    bank = _bank_cfg(meta["bank"])
    L = actor.shape.window
    ids = range(len(trajs)) if trajectory is None else [trajectory]
    for i in ids:
        if not 0 <= i < len(trajs):
            raise UsageError(f"trajectory index {i} out of range 0..{len(trajs) - 1}")
    tracks = [make_track(trajs[i], bank, L) for i in ids]
    ro = rollout(agent_policy(actor, meta["feature_scale"]), tracks, L, actor.shape.action_bound)
    rows = []
    for i, t, W in zip(ids, tracks, ro.weights):
        ks = range(len(t)) if steps is None else steps
        for k in ks:
            if not 0 <= k < len(t):
                raise UsageError(f"step {k} out of range 0..{len(t) - 1} for trajectory {i}")
            labels = [MODEL_NAMES[int(j)] for j in W[k].argmax(axis=1)]
            rows.append((i, k, W[k].copy(), labels))
    return rows


def cmd_dump_weights(args):
    trajs = _read_trajs(args.dataset)
    if args.checkpoint is None:
        raise UsageError("dump-weights needs --checkpoint")
    steps = None
    if args.steps:
        try:
            steps = [int(s) for s in args.steps.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"--steps must be comma-separated integers, got {args.steps!r}") from None
    rows = dump_weights(trajs, args.checkpoint, steps, args.trajectory)
    out = _out_dir(args)
    cols = [f"w_{ax}_{m.lower()}" for ax in "xyz" for m in MODEL_NAMES]
    with open(out / "weights.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "step"] + cols + ["best_x", "best_y", "best_z"])
        for i, k, W, labels in rows:
            w.writerow([i, k] + [repr(float(v)) for v in W.ravel()] + labels)
    counts = {m: sum(lab.count(m) for *_, lab in rows) for m in MODEL_NAMES}
    write_manifest(out / "manifest.json", args, {"steps": steps, "trajectory": args.trajectory},
                   {}, [args.dataset, args.checkpoint],
                   {"rows": len(rows), "argmax_counts": counts,
                    "weights_sha256": file_sha256(out / "weights.csv")}, {"weights": "weights.csv"})
    print(f"wrote {len(rows)} rows to {out / 'weights.csv'}; argmax counts {counts}")
    return EXIT_OK


# -- reproduce -------------------------------------------------------------

def cmd_reproduce(args):
    if args.manifest is None:
        raise UsageError("reproduce needs --manifest")
    p = Path(args.manifest)
    if not p.is_file():
        raise UsageError(f"manifest not found: {p}")
    man = json.loads(p.read_text())
    for path, digest in man["inputs"].items():
        if not Path(path).is_file() or file_sha256(path) != digest:
            raise DataFormatError(f"input {path} is missing or changed since the run")
    argv = list(man["argv"])
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(args.out) if args.out else Path(tmp) / "rerun"
        if man["command"] == "generate":
            out = out / "dataset.txt"
        argv = _replace_out(argv, str(out))
        code = main(argv)
        if code != EXIT_OK:
            return code
        new_path = (Path(str(out) + ".manifest.json") if man["command"] == "generate"
                    else out / "manifest.json")
        new = json.loads(new_path.read_text())
    if new["metrics"] == man["metrics"]:
        print(f"reproduced {man['command']}: all {len(_leaves(man['metrics']))} metric values identical")
        return EXIT_OK
    diff = [k for k in set(man["metrics"]) | set(new["metrics"])
            if man["metrics"].get(k) != new["metrics"].get(k)]
    print(f"reproduction mismatch in: {', '.join(sorted(diff))}", file=sys.stderr)
    return EXIT_MISMATCH


def _leaves(x):
    if isinstance(x, dict):
        return [v for k in x for v in _leaves(x[k])]
    if isinstance(x, list):
        return [v for item in x for v in _leaves(item)]
    return [x]


def _replace_out(argv, out):
    argv = list(argv)
    if "--out" in argv:
        argv[argv.index("--out") + 1] = out
    else:
        argv += ["--out", out]
    return argv


# -- entry point -----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="dimm", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, dataset=True):
        sp.add_argument("--config", help="JSON config file")
        if dataset:
            sp.add_argument("--dataset", help="dataset file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output file (generate) or directory")

    common(sub.add_parser("generate", help="write a synthetic dataset"), dataset=False)
    sp = sub.add_parser("train", help="train the fusion agent")
    common(sp)
    sp.add_argument("--reward", choices=("hierarchical", "simple"))
    sp.add_argument("--action-bound", type=float)
    sp = sub.add_parser("eval", help="evaluate a checkpoint or a baseline")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--baseline", help="one of " + ", ".join(BASELINES))
    sp = sub.add_parser("ablate", help="train/evaluate over a grid of settings")
    common(sp)
    sp = sub.add_parser("dump-weights", help="per-step fusion weights of a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--steps", help="comma-separated step indices (default: all)")
    sp.add_argument("--trajectory", type=int, help="trajectory index (default: all)")
    sp = sub.add_parser("reproduce", help="re-run a manifest and compare its metrics")
    sp.add_argument("--manifest")
    sp.add_argument("--out")
    return p


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "ablate": cmd_ablate, "dump-weights": cmd_dump_weights, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    args.argv = [os.path.abspath(a) if _is_path_arg(argv, i) else a for i, a in enumerate(argv)]
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except TrainingAborted as e:
        where = (e.diagnostics or {}).get("path")
        print(f"numerical failure: {e}" + (f" (diagnostics: {where})" if where else ""),
              file=sys.stderr)
        return EXIT_NUMERIC
    except (IllConditionedError, DivergenceError, FloatingPointError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE


_PATH_FLAGS = {"--config", "--dataset", "--checkpoint", "--out", "--manifest"}


def _is_path_arg(argv, i):
    return i > 0 and argv[i - 1] in _PATH_FLAGS


def command_line(argv) -> str:
    return "dimm " + " ".join(shlex.quote(a) for a in argv)


if __name__ == "__main__":
    sys.exit(main())
