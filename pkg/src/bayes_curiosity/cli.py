"""Command-line entry point: ``bayes-curiosity <subcommand> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import curiosity as cur
from . import harness
from .embed import DemoSet, EmbedTrainConfig, FeatureMap, generate_demos, train_embedding
from .envs import ENV_IDS
from .errors import ContractViolation, InvalidArgument, NumericalFailure, UnsupportedOperation

log = logging.getLogger("bayes_curiosity")

# flag name -> (section, field); section None means a top-level ExperimentConfig field
_EXPERIMENT_FLAGS = {
    "env": (None, "env"),
    "algorithm": (None, "algorithm"),
    "eta": (None, "eta"),
    "alpha": (None, "alpha"),
    "beta": (None, "beta"),
    "n_seeds": (None, "n_seeds"),
    "seed_base": (None, "seed_base"),
    "episodes": (None, "episodes"),
    "out_dir": (None, "out_dir"),
    "feature_map": (None, "feature_map"),
    "smooth_window": (None, "smooth_window"),
    "workers": (None, "workers"),
    "n_demos": ("demos", "n"),
    "demo_noise": ("demos", "noise_std"),
    "embed_epochs": ("embed", "max_epochs"),
    "latent_dim": ("embed", "latent_dim"),
    "embed_lr": ("embed", "learning_rate"),
    "gamma": ("rl", "gamma"),
    "lr": ("rl", "learning_rate"),
    "batch_episodes": ("rl", "batch_episodes"),
    "log_std_init": ("rl", "log_std_init"),
}


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON ExperimentConfig; flags override its fields")
    p.add_argument("--seed-base", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--env", choices=ENV_IDS)
    p.add_argument("--algorithm")
    p.add_argument("--eta", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--n-seeds", type=int)
    p.add_argument("--episodes", type=int)
    p.add_argument("--feature-map", help="frozen FeatureMap file; otherwise trained per seed")
    p.add_argument("--smooth-window", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--n-demos", type=int)
    p.add_argument("--demo-noise", type=float)
    p.add_argument("--embed-epochs", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--embed-lr", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-episodes", type=int)
    p.add_argument("--log-std-init", type=float)
    p.add_argument("--no-trajectories", action="store_true", help="skip trajectories.csv")


def experiment_config(args: argparse.Namespace) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    top, sections = {}, {"demos": {}, "embed": {}, "rl": {}}
    for flag, (section, name) in _EXPERIMENT_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        (top if section is None else sections[section])[name] = value
    for section, changes in sections.items():
        if changes:
            top[section] = dataclasses.replace(getattr(cfg, section), **changes)
    if args.no_trajectories:
        top["dump_trajectories"] = False
    return cfg.replace(**top)


def cmd_demos(args) -> int:
    demos = generate_demos(args.env, args.n, args.noise_std, args.seed)
    demos.to_csv(args.out)
    log.info("wrote %d demonstrations to %s", len(demos), args.out)
    return 0


def cmd_embed(args) -> int:
    if args.demos:
        demos = DemoSet.from_csv(args.demos)
    else:
        demos = generate_demos(args.env, args.n_demos, args.demo_noise, args.seed)
    cfg = EmbedTrainConfig(
        latent_dim=args.latent_dim, max_epochs=args.epochs, learning_rate=args.lr,
        alpha=args.alpha, beta=args.beta, seed=args.seed,
        unhalved_residual=args.unhalved_residual,
    )
    fm = train_embedding(demos, cfg, callback=lambda e, nll: log.info("epoch %d  nll %.6g", e, nll))
    fm.save(args.out)
    log.info("wrote feature map to %s", args.out)
    return 0


def cmd_train(args) -> int:
    cfg = experiment_config(args).replace(curiosity=not args.vanilla)
    summary = harness.run_experiment(cfg)
    _report(cfg.out_dir, summary)
    return 0 if not summary.partial else 3


def cmd_compare(args) -> int:
    cfg = experiment_config(args)
    vanilla, curious = harness.compare(cfg)
    _report("vanilla", vanilla)
    _report("curiosity", curious)
    if curious.speedup is not None:
        sp = curious.speedup
        print(f"speedup {sp.ratio:.4g}{' (inverted)' if sp.inverted else ''}")
    return 0 if not (vanilla.partial or curious.partial) else 3


def _report(name, summary: harness.RunSummary) -> None:
    q = summary.quartiles
    if q is None:
        print(f"{name}: every seed failed")
        return
    print(f"{name}: final reward median {q[1]:.4g} IQR ({q[0]:.4g}, {q[2]:.4g}); "
          f"median first success {summary.median_first_success():.6g}"
          f"{'; PARTIAL' if summary.partial else ''}")


def cmd_surface(args) -> int:
    if args.feature_map:
        fm = FeatureMap.load(args.feature_map)
    else:
        demos = generate_demos(args.env, args.n_demos, 0.1, args.seed)
        fm = train_embedding(demos, EmbedTrainConfig(max_epochs=args.embed_epochs, seed=args.seed))
    cs = cur.new_curiosity(fm, args.alpha, args.beta)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    harness.export_curiosity_surface(cs, args.env, args.resolution, out / "surface_before.csv")
    if args.visited:
        visited = np.loadtxt(args.visited, delimiter=",", skiprows=1, ndmin=2)[:, :2]
    else:
        visited = harness.confined_episode(seed=args.seed)
    cs = cur.absorb_episode(cs, visited)
    harness.export_curiosity_surface(cs, args.env, args.resolution, out / "surface_after.csv", visited)
    harness.write_manifest(out)
    log.info("wrote surfaces to %s", out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayes-curiosity", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demos", help="generate expert demonstrations as CSV")
    p.add_argument("--env", choices=ENV_IDS, default="mountaincar")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_demos)

    p = sub.add_parser("embed", help="train a feature map on demonstrations")
    p.add_argument("--demos", help="demonstration CSV; generated from --env if omitted")
    p.add_argument("--env", choices=ENV_IDS, default="mountaincar")
    p.add_argument("--n-demos", type=int, default=2000)
    p.add_argument("--demo-noise", type=float, default=0.1)
    p.add_argument("--latent-dim", type=int, default=16)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--alpha", type=float, default=1e-4)
    p.add_argument("--beta", type=float, default=1e2)
    p.add_argument("--unhalved-residual", action="store_true",
                   help="use r^2/sigma^2 instead of the exact r^2/(2 sigma^2)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="run RL over several seeds")
    _add_experiment_flags(p)
    p.add_argument("--vanilla", action="store_true", help="disable curiosity")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="vanilla vs. curiosity on the same seeds, with speedup")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("surface", help="export curiosity over the mountaincar state grid")
    p.add_argument("--env", choices=ENV_IDS, default="mountaincar")
    p.add_argument("--feature-map")
    p.add_argument("--n-demos", type=int, default=2000)
    p.add_argument("--embed-epochs", type=int, default=10)
    p.add_argument("--alpha", type=float, default=1e-4)
    p.add_argument("--beta", type=float, default=1e2)
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--visited", help="CSV whose first two columns are the states to absorb")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_surface)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InvalidArgument, UnsupportedOperation, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, ContractViolation) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
