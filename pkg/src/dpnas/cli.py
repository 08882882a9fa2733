"""``dpnas`` command line: search, train, eval, compile, export.

Every command writes under a run directory (``--run-dir``, default
``runs/<command>-seed<seed>``) containing the resolved ``config.json``.
Wall-clock timestamps go to ``metadata.json`` only, so two identical
invocations produce identical run directories apart from that file.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import __version__
from .compile import count_params, infer_shapes, to_dot
from .config import Config, ConfigError
from .data import add_awgn, center_crop, load_dir
from .engine import psnr, save_tensors
from .nsc import codes_from_obj, codes_to_json, prune_inactive, validate
from .runtime import evaluate, load_model
from .search import Searcher, k_sweep, make_data, make_test_set, rows_to_csv, run_full_training

log = logging.getLogger("dpnas")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("-c", "--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("-o", "--run-dir", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="dpnas", description="Q-learning search for denoising blocks")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("search", help="run the architecture search")
    _common(p)
    p.add_argument("-n", "--episodes", type=int)
    p.add_argument("-w", "--workers", type=int)
    p.add_argument("--mu", type=float)
    p.add_argument("--reward-mode", choices=["penalized", "psnr_only"])
    p.add_argument("--dmm-mode", choices=["full", "off", "zero_pad"])
    p.add_argument("--surrogate", action="store_true", default=None,
                   help="analytic reward instead of training (agent test harness)")
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--resume", help="search checkpoint to continue from")

    p = sub.add_parser("train", help="train the full prior model for one architecture")
    _common(p)
    p.add_argument("-a", "--arch", required=True, help="architecture JSON")
    p.add_argument("-K", type=int, dest="K")
    p.add_argument("--iterations", type=int)
    p.add_argument("--resume", help="model checkpoint directory to continue from")
    p.add_argument("--k-sweep", nargs="*", type=int, metavar="K",
                   help="train for each K and write k_sweep.csv (default 1 2 3 4)")

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    _common(p)
    p.add_argument("-m", "--model", required=True, help="model checkpoint directory")
    p.add_argument("-d", "--data", help="directory of clean PGM/PPM images (default: synthetic)")
    p.add_argument("--sigma", type=float)

    p = sub.add_parser("compile", help="shape plan, DOT graph and parameter count")
    _common(p)
    p.add_argument("-a", "--arch", required=True)
    p.add_argument("--emit-plan", action="store_true")
    p.add_argument("--emit-dot", action="store_true")
    p.add_argument("--dmm-mode", choices=["full", "off", "zero_pad"])

    p = sub.add_parser("export", help="DOT/CSV/raw exports from a run or checkpoint")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("-r", "--run", help="search run directory")
    src.add_argument("-m", "--model", help="model checkpoint directory")
    return ap


# ---------------------------------------------------------------------------


def resolve_config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    over = {}
    for name in ("seed", "episodes", "workers", "mu", "K", "checkpoint_every"):
        v = getattr(args, name, None)
        if v is not None:
            over[name] = v
    for flag, key in (("reward_mode", "reward_mode"), ("dmm_mode", "dmm_mode"),
                      ("surrogate", "surrogate"), ("iterations", "full_iterations"),
                      ("sigma", "noise_sigma")):
        v = getattr(args, flag, None)
        if v is not None:
            over[key] = v
    return cfg.replace(**over) if over else cfg


def _run_dir(args, cfg) -> str:
    path = args.run_dir or os.path.join("runs", f"{args.command}-seed{cfg.seed}")
    os.makedirs(path, exist_ok=True)
    return path


def _write(path, text):
    with open(path, "w") as f:
        f.write(text)


def _write_json(path, obj):
    _write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_arch(path):
    with open(path) as f:
        return codes_from_obj(json.load(f))


# ---------------------------------------------------------------------------


def cmd_search(args, cfg, run):
    ckpt_dir = os.path.join(run, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    ckpt = os.path.join(ckpt_dir, "search.json")
    if args.resume:
        searcher = Searcher.resume(args.resume)
        cfg = searcher.cfg
    else:
        searcher = Searcher(cfg)
    _write(os.path.join(run, "config.json"), cfg.to_json() + "\n")
    report = searcher.run(ckpt)
    searcher.checkpoint(ckpt)

    _write(os.path.join(run, "log.csv"), rows_to_csv(report.rows))
    _write_json(os.path.join(run, "qtable.json"), searcher.agent.table_dict())
    top = os.path.join(run, "top_k")
    os.makedirs(top, exist_ok=True)
    for i, row in enumerate(report.top_k, start=1):
        _write_json(os.path.join(top, f"rank{i:02d}.json"),
                    {"episode": row.episode, "reward": row.reward, "psnr": row.psnr,
                     "params": row.params, "nsc": json.loads(row.nsc)})
    if report.selected is not None:
        _write(os.path.join(run, "selected_arch.json"), row_arch(report.selected))
        print(f"selected episode {report.selected.episode}: reward {report.selected.reward:.4f} "
              f"psnr {report.selected.psnr:.3f} params {report.selected.params}")
    else:
        print("no candidate finished successfully")
    return 0


def row_arch(row) -> str:
    return json.dumps(json.loads(row.nsc), indent=2) + "\n"


def cmd_train(args, cfg, run):
    codes = _read_arch(args.arch)
    _write(os.path.join(run, "config.json"), cfg.to_json() + "\n")
    _write(os.path.join(run, "selected_arch.json"), json.dumps(json.loads(codes_to_json(codes)), indent=2) + "\n")
    if args.k_sweep is not None:
        ks = args.k_sweep or [1, 2, 3, 4]
        rows = k_sweep(codes, cfg, ks)
        with open(os.path.join(run, "k_sweep.csv"), "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["K", "test_psnr"])
            for k, v in rows:
                w.writerow([k, repr(v)])
        for k, v in rows:
            print(f"K={k} test PSNR {v:.3f}")
        return 0
    ckpt = os.path.join(run, "checkpoints", "model")
    res = run_full_training(codes, cfg, data=make_data(cfg), test_set=make_test_set(cfg),
                            checkpoint_dir=ckpt, resume_from=args.resume)
    res.trainer.write_metrics(os.path.join(run, "metrics.csv"))
    _write_json(os.path.join(run, "result.json"),
                {"K": res.model.K, "test_psnr": res.test_psnr, "noisy_psnr": res.noisy_psnr,
                 "gain_db": res.test_psnr - res.noisy_psnr, "iterations": res.trainer.iteration,
                 "params": sum(p.data.size for p in res.model.parameters())})
    print(f"test PSNR {res.test_psnr:.3f} dB (noisy input {res.noisy_psnr:.3f} dB)")
    return 0


def cmd_eval(args, cfg, run):
    model, _ = load_model(args.model)
    h = model.blocks[0].plan.input_shape.h
    if args.data:
        # the compiled plan fixes the spatial size, so images are center-cropped to it
        clean = np.stack([center_crop(im, h) for im in load_dir(args.data)])
        noisy = add_awgn(clean, cfg.noise_sigma, np.random.default_rng([cfg.seed, 5]))
    else:
        noisy, clean = make_test_set(cfg)
    mean, per = evaluate(model, noisy, clean)
    noisy_mean = float(np.mean([psnr(n, c) for n, c in zip(noisy, clean)]))
    _write(os.path.join(run, "config.json"), cfg.to_json() + "\n")
    _write_json(os.path.join(run, "eval.json"),
                {"test_psnr": mean, "noisy_psnr": noisy_mean, "per_image": per, "n": len(per)})
    print(json.dumps({"test_psnr": mean, "noisy_psnr": noisy_mean, "n": len(per)}))
    return 0


def cmd_compile(args, cfg, run):
    codes = _read_arch(args.arch)
    g = prune_inactive(validate(codes, cfg.max_layers))
    plan = infer_shapes(g, (cfg.image_channels, cfg.patch_size, cfg.patch_size), cfg.dmm_mode, cfg.base_width)
    if args.emit_plan:
        d = plan.to_dict()
        d["params"] = count_params(g, plan)
        d["inactive"] = [c.index for c in codes if not g.is_active(c.index)]
        sys.stdout.write(json.dumps(d, indent=2) + "\n")
    if args.emit_dot:
        sys.stdout.write(to_dot(g, plan))
    if not (args.emit_plan or args.emit_dot):
        print(f"params {count_params(g, plan)}; active layers {len(g.active_codes())}; "
              f"repairs {len(plan.repairs)}")
    return 0


def cmd_export(args, cfg, run):
    out = os.path.join(run, "export")
    os.makedirs(out, exist_ok=True)
    if args.model:
        model, _ = load_model(args.model)
        save_tensors(os.path.join(out, "weights.bin"),
                     {k: p.data for k, p in model.named_parameters().items()})
        g = model.blocks[0].graph
        _write(os.path.join(out, "block.dot"), to_dot(g, model.blocks[0].plan))
        print(f"wrote {out}")
        return 0
    rows = []
    top = os.path.join(args.run, "top_k")
    for name in sorted(os.listdir(top)):
        with open(os.path.join(top, name)) as f:
            rec = json.load(f)
        codes = codes_from_obj(rec["nsc"])
        g = prune_inactive(validate(codes))
        plan = infer_shapes(g, (cfg.image_channels, cfg.patch_size, cfg.patch_size), cfg.dmm_mode, cfg.base_width)
        stem = os.path.splitext(name)[0]
        _write(os.path.join(out, stem + ".dot"), to_dot(g, plan))
        rows.append([stem, rec["episode"], rec["params"], rec["psnr"], rec["reward"], len(g.active_codes())])
    with open(os.path.join(out, "top_k.csv"), "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["rank", "episode", "params", "psnr", "reward", "active_layers"])
        w.writerows(rows)
    print(f"wrote {len(rows)} architectures to {out}")
    return 0


COMMANDS = {"search": cmd_search, "train": cmd_train, "eval": cmd_eval,
            "compile": cmd_compile, "export": cmd_export}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            raise UsageError("dpnas: a command is required (search, train, eval, compile, export)")
        cfg = resolve_config(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help / --version
        return int(e.code or 0)
    except (ConfigError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "compile" and not args.run_dir:
            run = None
        else:
            run = _run_dir(args, cfg)
            if args.command == "export" and not args.run_dir and args.run:
                run = args.run
        started = time.time()
        code = COMMANDS[args.command](args, cfg, run)
        if run is not None:
            _write_json(os.path.join(run, "metadata.json"),
                        {"command": args.command, "started": started, "finished": time.time(),
                         "version": __version__})
        return code
    except Exception as e:  # runtime failure
        log.debug("command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
