"""Command-line entry point: ``rfcmotion <command> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 1 user error (bad flags, config, inputs), 2 internal error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from . import config as C
from . import dualctl, ppo, synth
from .clips import MotionClip, load_clip, load_dataset, save_clip
from .dynamics import required_root_wrench, write_wrench_csv
from .env import ImitationEnv, Tracker
from .errors import ConfigError, ContractError, ModelError
from .kinpolicy import Cvae, train_cvae
from .model import resolve_model
from .net import load_checkpoint
from .rewards import imitation_reward, tracking_features

log = logging.getLogger("rfcmotion")

USER_ERRORS = (ContractError, ConfigError, ModelError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--preset", choices=sorted(C.PRESETS), help="named set of defaults applied before the file")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config entry (repeatable)")
    p.add_argument("--seed", type=int, help="random seed (same as --set seed=N)")
    p.add_argument("--workers", type=int, help="rollout workers (same as --set workers=N)")
    p.add_argument("--out", help="run directory (default: $%s/<command>)" % C.OUTPUT_ENV)


def build_parser():
    ap = _Parser(prog="rfcmotion", description="Residual-force humanoid imitation toolkit")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train-imitate", help="PPO motion imitation on one clip")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the run directory's checkpoint")

    p = sub.add_parser("train-kinematic", help="fit the CVAE kinematic policy on a clip directory")
    _common(p)
    p.add_argument("--epochs", type=int, help="stop early after this many epochs")

    p = sub.add_parser("train-dual", help="train the tracking policy on generated futures")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("rollout", help="run a trained policy and save the simulated motion")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seconds", type=float, help="dual-policy synthesis length")
    p.add_argument("--frame", type=int, default=0, help="imitation start frame")

    p = sub.add_parser("eval", help="evaluate a trained policy (return or MAE/FAE)")
    _common(p)
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("analyze-forces", help="per-frame root wrench a clip demands")
    _common(p)
    p.add_argument("--clip", help="clip file (overrides config)")
    p.add_argument("--no-contacts", action="store_true", help="assume no ground support")

    p = sub.add_parser("gen-clip", help="write a synthetic reference clip")
    p.add_argument("--kind", required=True, choices=synth.KINDS)
    p.add_argument("--model", default="biped")
    p.add_argument("--duration", type=float)
    p.add_argument("--count", type=int, help="write a dataset of this many clips (turn pairs / walks)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="clip file, or directory with --count")

    p = sub.add_parser("export-curve", help="aggregate learning curves of several runs")
    p.add_argument("runs", nargs="+", help="run directories containing log.csv")
    p.add_argument("--out", required=True)
    return ap


# -- helpers -----------------------------------------------------------------

def _config(args):
    over = list(args.overrides)
    if args.seed is not None:
        over.append(f"seed={args.seed}")
    if args.workers is not None:
        over.append(f"workers={args.workers}")
    cfg = C.resolve(args.config, over, args.preset)
    return cfg


def _run_dir(args, cfg):
    out = args.out or cfg.get("output") or (C.output_root() / args.command)
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    cfg["output"] = str(d)
    C.dump(cfg, d / "config.yaml")
    return d


def _clip(cfg, model):
    spec = cfg["clip"]
    if spec is None:
        raise ConfigError("config needs 'clip' (file path or {kind, duration})")
    if isinstance(spec, dict):
        kw = dict(spec)
        kind = kw.pop("kind")
        return synth.generate_synthetic_clip(kind, model, **kw)
    return load_clip(spec)


def _tracker(cfg, model, residual=None):
    c = cfg["controller"]
    res = c["residual_targets"] if residual is None else residual
    return Tracker(model, c["mode"], C.reward_config(cfg), c["stable_pd"], res)


def _imitation_setup(cfg):
    model = resolve_model(cfg["model"])
    clip = _clip(cfg, model)
    tracker = _tracker(cfg, model)
    pc = C.ppo_config(cfg)
    envs = [ImitationEnv(model, clip, tracker, cfg["controller"]["phase"], pc.horizon)
            for _ in range(int(cfg["workers"]))]
    agent = ppo.Agent(envs[0].obs_dim, envs[0].action_dim, pc.hidden, pc.policy_variance,
                      np.random.default_rng([int(cfg["seed"]), 7]), pc.normalize_obs)
    return model, clip, envs, agent, pc


def _kinematic(cfg):
    path = cfg["kinematic"]
    if path is None:
        raise ConfigError("config needs 'kinematic' (CVAE checkpoint)")
    kin, _ = Cvae.load(path)
    return kin


def _dual_setup(cfg):
    model = resolve_model(cfg["model"])
    if cfg["dataset"] is None:
        raise ConfigError("config needs 'dataset' (directory of clips)")
    clips = load_dataset(cfg["dataset"])
    kin = _kinematic(cfg)
    tracker = _tracker(cfg, model, residual=True)
    pc = C.ppo_config(cfg)
    envs = [dualctl.DualEnv(model, clips, kin, tracker, cfg["dual"]["segments"]) for _ in range(int(cfg["workers"]))]
    agent = dualctl.make_dual_agent(model, kin, tracker, pc, int(cfg["seed"]))
    return model, clips, kin, tracker, envs, agent, pc


def _train(trainer, run_dir, epochs, resume, every):
    ckpt = run_dir / "checkpoint.npz"
    logp = run_dir / "log.csv"
    if resume and ckpt.exists():
        trainer.load(ckpt)
        _truncate_log(logp, trainer.epoch)
        log.info("resumed at epoch %d", trainer.epoch)
    elif logp.exists():
        logp.unlink()
    remaining = max(0, epochs - trainer.epoch)
    try:
        trainer.train(remaining, logp, ckpt, every)
    except KeyboardInterrupt:
        trainer.save(ckpt)
        log.warning("interrupted; checkpoint saved at epoch %d", trainer.epoch)
        raise
    return ckpt


def _truncate_log(path, epochs):
    if not path.exists():
        return
    rows = path.read_text().splitlines()
    path.write_text("\n".join(rows[:1 + epochs]) + "\n")


# -- commands ------------------------------------------------------------------

def cmd_train_imitate(args):
    cfg = _config(args)
    run = _run_dir(args, cfg)
    model, clip, envs, agent, pc = _imitation_setup(cfg)
    trainer = ppo.PpoTrainer(agent, envs, pc, int(cfg["seed"]), bool(cfg["parallel"]))
    epochs = args.epochs if args.epochs is not None else pc.epochs
    _train(trainer, run, epochs, args.resume, int(cfg["checkpoint_every"]))
    ret_im, ret, n = ppo.evaluate(agent, envs[0])
    print(f"epochs={trainer.epoch} eval_return_im={ret_im:.6f} eval_return={ret:.6f} length={n}")
    return 0


def cmd_train_kinematic(args):
    cfg = _config(args)
    run = _run_dir(args, cfg)
    if cfg["dataset"] is None:
        raise ConfigError("config needs 'dataset' (directory of clips)")
    clips = load_dataset(cfg["dataset"])
    cc = C.cvae_config(cfg)
    logp = run / "cvae_log.csv"
    if logp.exists():
        logp.unlink()
    kin, rows = train_cvae(clips, cc, int(cfg["seed"]), logp, run, args.epochs)
    kin.save(run / "cvae_final.npz", {"epoch": len(rows), "seed": int(cfg["seed"])})
    print(f"epochs={len(rows)} final_loss={rows[-1]['loss']:.6f} checkpoint={run / 'cvae_final.npz'}")
    return 0


def cmd_train_dual(args):
    cfg = _config(args)
    run = _run_dir(args, cfg)
    model, clips, kin, tracker, envs, agent, pc = _dual_setup(cfg)
    trainer = ppo.PpoTrainer(agent, envs, pc, int(cfg["seed"]), bool(cfg["parallel"]))
    epochs = args.epochs if args.epochs is not None else pc.epochs
    _train(trainer, run, epochs, args.resume, int(cfg["checkpoint_every"]))
    print(f"epochs={trainer.epoch} checkpoint={run / 'checkpoint.npz'}")
    return 0


def _load_agent(agent, path):
    arrays, meta = load_checkpoint(path)
    if meta.get("obs_dim") != agent.obs_dim or meta.get("act_dim") != agent.act_dim:
        raise ConfigError(f"checkpoint {path} does not match this configuration")
    agent.load_arrays(arrays)
    return meta


def cmd_rollout(args):
    cfg = _config(args)
    run = _run_dir(args, cfg)
    if cfg["dataset"] is not None and cfg["kinematic"] is not None:
        model, clips, kin, tracker, envs, agent, pc = _dual_setup(cfg)
        _load_agent(agent, args.checkpoint)
        seconds = args.seconds if args.seconds is not None else cfg["dual"]["synth_seconds"]
        steps = int(round(seconds * clips[0].fps))
        res = dualctl.synthesize(kin, agent, tracker, clips[0], kin.config.past + 1, steps,
                                 np.random.default_rng(int(cfg["seed"])), dualctl.dataset_fall_height(clips),
                                 cfg["dual"]["condition"])
        save_clip(res.to_clip(model, clips[0].fps), run / "synthesis.json")
        print(f"steps={len(res.frames)} falls={len(res.falls)} z_draws={res.z_draws}")
        return 0
    model, clip, envs, agent, pc = _imitation_setup(cfg)
    _load_agent(agent, args.checkpoint)
    env = envs[0]
    obs = env.reset(frame=args.frame)
    frames = [env.state.q.copy()]
    rows = []
    while True:
        a, _, _, _ = agent.act(obs, deterministic=True)
        r = env.step(a)
        _, subs = imitation_reward(tracking_features(model, r.state.q, r.state.qdot), env.ref_feat[env.t], model,
                                   env.tracker.reward)
        rows.append([env.t, r.r_im, "" if r.r_reg is None else r.r_reg, r.reward, *subs])
        frames.append(r.state.q.copy())
        if r.done:
            break
        obs = env.observe()
    save_clip(MotionClip(np.array(frames), clip.fps, name="rollout", model=model.name, model_hash=model.hash),
              run / "rollout.json")
    kind = env.tracker.reward.kind
    names = ["r_p", "r_v", "r_e", "r_c"] if kind == "world" else ["r_p", "r_e", "r_rp", "r_rv"]
    with open(run / "rewards.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "r_im", "r_reg", "r_total", *names])
        w.writerows(rows)
    print(f"steps={len(rows)} return_im={sum(r[1] for r in rows):.6f}")
    return 0


def cmd_eval(args):
    cfg = _config(args)
    run = _run_dir(args, cfg)
    if cfg["kinematic"] is not None:
        model, clips, kin, tracker, envs, agent, pc = _dual_setup(cfg)
        _load_agent(agent, args.checkpoint)
        test = load_dataset(cfg["test_dataset"]) if cfg["test_dataset"] else clips
        mae, fae, _ = dualctl.evaluate_mae_fae(kin, agent, tracker, test, int(cfg["dual"]["samples"]),
                                               np.random.default_rng(int(cfg["seed"])), csv_path=run / "eval.csv")
        print(f"MAE={mae:.6f} FAE={fae:.6f}")
        return 0
    model, clip, envs, agent, pc = _imitation_setup(cfg)
    _load_agent(agent, args.checkpoint)
    ret_im, ret, n = ppo.evaluate(agent, envs[0])
    print(f"return_im={ret_im:.6f} return={ret:.6f} length={n} max={len(clip) - 1}")
    return 0


def cmd_analyze_forces(args):
    cfg = _config(args)
    run = _run_dir(args, cfg)
    model = resolve_model(cfg["model"])
    clip = load_clip(args.clip) if args.clip else _clip(cfg, model)
    clip.check_model(model)
    wrenches, counts = required_root_wrench(model, clip, None if args.no_contacts else "auto")
    path = run / "root_wrench.csv"
    write_wrench_csv(path, wrenches, counts)
    weight = model.total_mass * abs(model.gravity[1])
    fy = float(np.mean(wrenches[:, 1]))
    print(f"frames={len(clip)} mean_fy={fy:.6f} weight={weight:.6f} ratio={fy / weight:.6f} "
          f"mean_norm={float(np.mean(np.linalg.norm(wrenches, axis=1))):.6f} csv={path}")
    return 0


def cmd_gen_clip(args):
    model = resolve_model(args.model)
    rng = np.random.default_rng(args.seed)
    if args.count:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        kw = {} if args.duration is None else {"duration": args.duration}
        if args.kind == "bimodal-turn":
            if args.count % 2:
                raise ContractError("bimodal-turn datasets need an even count")
            clips = synth.bimodal_turn_dataset(model, args.count // 2, rng, **kw)
        elif args.kind == "cyclic-walk":
            clips = synth.cyclic_walk_dataset(model, args.count, rng, **kw)
        else:
            raise ContractError(f"--count is only supported for bimodal-turn and cyclic-walk")
        for c in clips:
            save_clip(c, out / f"{c.name}.json")
        print(f"wrote {len(clips)} clips to {out}")
        return 0
    clip = synth.generate_synthetic_clip(args.kind, model, args.duration)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    save_clip(clip, args.out)
    print(f"wrote {len(clip)} frames to {args.out}")
    return 0


def export_learning_curve(run_dirs, out_path, column="mean_return_im"):
    """Per-epoch mean and min/max envelope of ``column`` across runs (imitation-only return)."""
    logs = []
    for d in run_dirs:
        p = Path(d) / "log.csv"
        if not p.exists():
            raise FileNotFoundError(f"missing training log {p}")
        logs.append(ppo.read_log(p))
    n = min(len(lg) for lg in logs)
    if n == 0:
        raise ContractError("training logs are empty")
    rows = []
    for e in range(n):
        vals = np.array([lg[e][column] for lg in logs])
        rows.append((int(logs[0][e]["epoch"]), float(vals.mean()), float(vals.min()), float(vals.max()), len(vals)))
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean", "min", "max", "runs"])
        for r in rows:
            w.writerow([r[0], repr(r[1]), repr(r[2]), repr(r[3]), r[4]])
    return rows


def cmd_export_curve(args):
    rows = export_learning_curve(args.runs, args.out)
    print(f"epochs={len(rows)} runs={rows[0][4]} csv={args.out}")
    return 0


COMMANDS = {
    "train-imitate": cmd_train_imitate, "train-kinematic": cmd_train_kinematic, "train-dual": cmd_train_dual,
    "rollout": cmd_rollout, "eval": cmd_eval, "analyze-forces": cmd_analyze_forces, "gen-clip": cmd_gen_clip,
    "export-curve": cmd_export_curve,
}


def run_command(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
