"""Seeded experiment runner: vanilla vs. curiosity arms, aggregation, speedup.

Output layout of one run directory::

    config.json               the ExperimentConfig that produced the run
    summary.csv               long format: scope, statistic, value
    manifest.json             file list with SHA-256 digests
    seed_<k>/learning_curve.csv   episode, timesteps, mean_extrinsic, mean_curiosity, success_flag
    seed_<k>/trajectories.csv     episode, t, obs..., action..., e_t, c_t, r_t
    seed_<k>/featuremap.bin       embedding used by the curiosity arm

``mean_extrinsic`` in a learning curve is the undiscounted extrinsic return
of that episode; ``mean_curiosity`` is the per-step average curiosity (left
empty when curiosity is off).  Quantiles use linear interpolation between
order statistics (``numpy.percentile(method="linear")``); means over
episodes use ``math.fsum`` so they can be recomputed exactly.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import curiosity as cur
from .embed import DemoSet, EmbedTrainConfig, FeatureMap, generate_demos, train_embedding
from .envs import ENV_IDS, make as make_env
from .errors import InvalidArgument, UnsupportedOperation
from .rl import ALGORITHMS, GaussianPolicy, ReinforceConfig, rollout, with_curiosity

__all__ = [
    "DemoConfig",
    "ExperimentConfig",
    "Curve",
    "Speedup",
    "SeedResult",
    "RunSummary",
    "smooth",
    "quartiles",
    "compute_speedup",
    "run_seed",
    "run_experiment",
    "compare",
    "export_curiosity_surface",
    "MOUNTAINCAR_SURFACE_BOUNDS",
]

LEARNING_CURVE_COLUMNS = ["episode", "timesteps", "mean_extrinsic", "mean_curiosity", "success_flag"]
MOUNTAINCAR_SURFACE_BOUNDS = ((-1.2, 0.6), (-0.07, 0.07))


@dataclass(frozen=True)
class DemoConfig:
    n: int = 2000
    noise_std: float = 0.1


@dataclass
class ExperimentConfig:
    env: str = "mountaincar"
    algorithm: str = "reinforce"
    curiosity: bool = True
    eta: float = 1.0
    alpha: float = 1e-4
    beta: float = 1e2
    n_seeds: int = 10
    seed_base: int = 0
    episodes: int = 300
    out_dir: str = "runs/default"
    feature_map: str | None = None
    demos: DemoConfig = field(default_factory=DemoConfig)
    embed: EmbedTrainConfig = field(default_factory=EmbedTrainConfig)
    rl: ReinforceConfig = field(default_factory=ReinforceConfig)
    smooth_window: int = 10
    dump_trajectories: bool = True
    workers: int = 1

    def validate(self) -> None:
        if self.env not in ENV_IDS:
            raise InvalidArgument(f"unknown environment {self.env!r}")
        if self.algorithm not in ALGORITHMS:
            raise InvalidArgument(f"unknown algorithm {self.algorithm!r}; have {sorted(ALGORITHMS)}")
        if self.n_seeds < 1 or self.episodes < 1 or self.smooth_window < 1 or self.workers < 1:
            raise InvalidArgument("n_seeds, episodes, smooth_window and workers must be positive")
        if self.eta < 0:
            raise InvalidArgument("eta must be nonnegative")
        if self.curiosity and self.feature_map is not None and not Path(self.feature_map).is_file():
            raise InvalidArgument(f"feature map {self.feature_map} does not exist")

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["embed"]["hidden"] = list(d["embed"]["hidden"])
        d["rl"]["hidden"] = list(d["rl"]["hidden"])
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        d = dict(d)
        demos = DemoConfig(**d.pop("demos", {}))
        embed = EmbedTrainConfig(**d.pop("embed", {}))
        rl = ReinforceConfig(**d.pop("rl", {}))
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidArgument(f"unknown config keys {sorted(unknown)}")
        return cls(demos=demos, embed=embed, rl=rl, **d)

    def save(self, path) -> None:
        """Write the config as JSON.  ``out_dir`` is left out: it is wherever the file lives,
        and keeping it out makes identical experiments byte-identical wherever they run."""
        d = self.to_dict()
        del d["out_dir"]
        Path(path).write_text(json.dumps(d, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        d = json.loads(Path(path).read_text())
        d.setdefault("out_dir", str(Path(path).parent))
        return cls.from_dict(d)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


# -- curve statistics ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class Curve:
    """A learning curve: metric values indexed by cumulative timesteps."""

    timesteps: np.ndarray
    values: np.ndarray
    metric: str = "extrinsic_return"

    def __post_init__(self) -> None:
        t = np.asarray(self.timesteps, dtype=np.float64)
        v = np.asarray(self.values, dtype=np.float64)
        if t.shape != v.shape or t.ndim != 1 or t.size == 0:
            raise InvalidArgument("curve needs nonempty, equal-length timesteps and values")
        object.__setattr__(self, "timesteps", t)
        object.__setattr__(self, "values", v)


def smooth(values, window: int) -> np.ndarray:
    """Trailing moving average; the first ``window - 1`` points average what is available."""
    v = np.asarray(values, dtype=np.float64)
    out = np.empty_like(v)
    for i in range(v.size):
        chunk = v[max(0, i - window + 1):i + 1]
        out[i] = math.fsum(chunk) / chunk.size
    return out


def quartiles(values) -> tuple[float, float, float]:
    q25, q50, q75 = np.percentile(np.asarray(values, dtype=np.float64), [25, 50, 75], method="linear")
    return float(q25), float(q50), float(q75)


def _first_reaching(curve_t: np.ndarray, curve_v: np.ndarray, level: float) -> float | None:
    idx = np.flatnonzero(curve_v >= level)
    return float(curve_t[idx[0]]) if idx.size else None


@dataclass(frozen=True)
class Speedup:
    ratio: float
    inverted: bool
    baseline_timesteps: float
    curiosity_timesteps: float

    def __float__(self) -> float:
        return self.ratio


def compute_speedup(curiosity_curve: Curve, baseline_curve: Curve, window: int = 1) -> Speedup:
    """Timesteps the baseline needs to reach its best (smoothed) value, divided
    by the timesteps the curiosity curve needs to match it.

    If the curiosity curve never matches, the roles swap: curiosity's time
    to its own best over the baseline's time to match that, with
    ``inverted=True``.
    """
    if curiosity_curve.metric != baseline_curve.metric:
        raise InvalidArgument(
            f"metric mismatch: {curiosity_curve.metric!r} vs {baseline_curve.metric!r}"
        )
    cs = smooth(curiosity_curve.values, window)
    bs = smooth(baseline_curve.values, window)
    b_best = bs.max()
    t_b = _first_reaching(baseline_curve.timesteps, bs, b_best)
    t_c = _first_reaching(curiosity_curve.timesteps, cs, b_best)
    if t_c is not None:
        return Speedup(t_b / t_c, False, t_b, t_c)
    c_best = cs.max()
    t_c = _first_reaching(curiosity_curve.timesteps, cs, c_best)
    t_b = _first_reaching(baseline_curve.timesteps, bs, c_best)
    return Speedup(t_c / t_b, True, t_b, t_c)


# -- single seed ----------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    status: str = "ok"
    returns: list[float] = field(default_factory=list)
    timesteps: list[int] = field(default_factory=list)
    successes: list[bool] = field(default_factory=list)
    min_curiosity: float | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def final_reward(self, window: int) -> float:
        tail = self.returns[-window:]
        return math.fsum(tail) / len(tail)

    def timesteps_to_peak(self, window: int) -> int:
        s = smooth(self.returns, window)
        return int(self.timesteps[int(np.argmax(s))])

    def first_success_timestep(self) -> int | None:
        for t, ok in zip(self.timesteps, self.successes):
            if ok:
                return int(t)
        return None


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _feature_map_for_seed(cfg: ExperimentConfig, seed: int) -> FeatureMap:
    if cfg.feature_map is not None:
        return FeatureMap.load(cfg.feature_map)
    demos = generate_demos(cfg.env, cfg.demos.n, cfg.demos.noise_std, seed)
    embed_cfg = dataclasses.replace(cfg.embed, seed=seed, alpha=cfg.alpha, beta=cfg.beta)
    return train_embedding(demos, embed_cfg)


def run_seed(cfg: ExperimentConfig, seed: int, out_dir) -> SeedResult:
    """Run the curiosity-augmented RL loop for one seed and write its CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = make_env(cfg.env)
    rng = np.random.default_rng(seed)
    policy = GaussianPolicy.init(env.spec, rng, cfg.rl.hidden, cfg.rl.log_std_init)
    algo = ALGORITHMS[cfg.algorithm](policy, cfg.rl)
    cs = None
    if cfg.curiosity:
        fm = _feature_map_for_seed(cfg, seed)
        fm.save(out / "featuremap.bin")
        cs = cur.new_curiosity(fm, cfg.alpha, cfg.beta, cfg.eta)

    result = SeedResult(seed)
    total = 0
    batch = []
    traj_fh = open(out / "trajectories.csv", "w", newline="") if cfg.dump_trajectories else None
    try:
        traj_writer = csv.writer(traj_fh) if traj_fh else None
        with open(out / "learning_curve.csv", "w", newline="") as fh:
            curve = csv.writer(fh)
            curve.writerow(LEARNING_CURVE_COLUMNS)
            for episode in range(cfg.episodes):
                traj = rollout(env, algo.policy, rng, seed=int(rng.integers(2**31)))
                if cs is not None:
                    traj = with_curiosity(traj, cs)
                    cs = cur.absorb_episode(cs, traj.all_observations)
                    low = float(traj.curiosity.min())
                    result.min_curiosity = low if result.min_curiosity is None else min(result.min_curiosity, low)
                total += len(traj)
                result.returns.append(traj.extrinsic_return)
                result.timesteps.append(total)
                result.successes.append(bool(traj.success))
                mean_c = math.fsum(traj.curiosity) / len(traj) if cs is not None else None
                curve.writerow([episode, total, _fmt(traj.extrinsic_return), _fmt(mean_c), int(traj.success)])
                if traj_writer is not None:
                    traj.write_csv(traj_writer, episode=episode, header=(episode == 0))
                batch.append(traj)
                if len(batch) == cfg.rl.batch_episodes:
                    algo.update(batch)
                    batch = []
    finally:
        if traj_fh:
            traj_fh.close()
    algo.policy.save(out / "policy.bin")
    return result


def _run_seed_safe(args) -> SeedResult:
    cfg, seed, out_dir = args
    try:
        return run_seed(cfg, seed, out_dir)
    except Exception as exc:  # recorded per seed; the experiment continues
        res = SeedResult(seed, status=f"failed: {type(exc).__name__}: {exc}")
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "error.txt").write_text(traceback.format_exc())
        return res


# -- whole experiment -------------------------------------------------------

@dataclass
class RunSummary:
    seeds: list[SeedResult]
    smooth_window: int
    speedup: Speedup | None = None

    @property
    def ok_seeds(self) -> list[SeedResult]:
        return [s for s in self.seeds if s.ok]

    @property
    def partial(self) -> bool:
        return len(self.ok_seeds) < len(self.seeds)

    @property
    def final_rewards(self) -> list[float]:
        return [s.final_reward(self.smooth_window) for s in self.ok_seeds]

    @property
    def quartiles(self) -> tuple[float, float, float] | None:
        return quartiles(self.final_rewards) if self.ok_seeds else None

    @property
    def median(self) -> float | None:
        q = self.quartiles
        return None if q is None else q[1]

    @property
    def timesteps_to_peak(self) -> list[int]:
        return [s.timesteps_to_peak(self.smooth_window) for s in self.ok_seeds]

    @property
    def first_success(self) -> list[int | None]:
        return [s.first_success_timestep() for s in self.ok_seeds]

    def median_first_success(self) -> float:
        """Median timesteps to first success; seeds that never succeed count as +inf."""
        vals = [math.inf if t is None else float(t) for t in self.first_success]
        return float(np.median(vals)) if vals else math.inf

    def aggregate_curve(self) -> Curve:
        """Episode-wise median over seeds of return and cumulative timesteps."""
        ok = self.ok_seeds
        n = min(len(s.returns) for s in ok)
        returns = np.median(np.array([s.returns[:n] for s in ok]), axis=0)
        steps = np.median(np.array([s.timesteps[:n] for s in ok], dtype=np.float64), axis=0)
        return Curve(steps, returns)

    def rows(self) -> list[list[str]]:
        rows = []
        w = self.smooth_window
        for s in self.seeds:
            scope = f"seed_{s.seed}"
            rows.append([scope, "status", s.status])
            if s.ok:
                rows.append([scope, "final_reward", _fmt(s.final_reward(w))])
                rows.append([scope, "timesteps_to_peak", _fmt(s.timesteps_to_peak(w))])
                rows.append([scope, "first_success_timestep", _fmt(s.first_success_timestep())])
                rows.append([scope, "min_curiosity", _fmt(s.min_curiosity)])
        rows.append(["aggregate", "n_seeds", _fmt(len(self.seeds))])
        rows.append(["aggregate", "n_ok", _fmt(len(self.ok_seeds))])
        rows.append(["aggregate", "partial", _fmt(self.partial)])
        q = self.quartiles
        if q is not None:
            rows.append(["aggregate", "q25_final_reward", _fmt(q[0])])
            rows.append(["aggregate", "median_final_reward", _fmt(q[1])])
            rows.append(["aggregate", "q75_final_reward", _fmt(q[2])])
            rows.append(["aggregate", "median_timesteps_to_peak", _fmt(float(np.median(self.timesteps_to_peak)))])
            rows.append(["aggregate", "median_first_success_timestep", _fmt(self.median_first_success())])
            rows.append(["aggregate", "n_success", _fmt(sum(t is not None for t in self.first_success))])
        if self.speedup is not None:
            rows.append(["aggregate", "speedup", _fmt(self.speedup.ratio)])
            rows.append(["aggregate", "speedup_inverted", _fmt(self.speedup.inverted)])
        return rows

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scope", "statistic", "value"])
            w.writerows(self.rows())


def write_manifest(directory, extra: dict | None = None) -> None:
    """Record every file under ``directory`` with its SHA-256 (sorted, no timestamps)."""
    d = Path(directory)
    files = {}
    for p in sorted(d.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(d).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    manifest = {"format": "bayes-curiosity-run", "version": 1, "files": files}
    if extra:
        manifest.update(extra)
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_experiment(cfg: ExperimentConfig, write_manifest_file: bool = True) -> RunSummary:
    """Run every seed of ``cfg`` and write per-seed CSVs, summary and manifest."""
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    seeds = [cfg.seed_base + i for i in range(cfg.n_seeds)]
    jobs = [(cfg, s, out / f"seed_{s}") for s in seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            results = list(ex.map(_run_seed_safe, jobs))
    else:
        results = [_run_seed_safe(job) for job in jobs]
    summary = RunSummary(results, cfg.smooth_window)
    summary.write_csv(out / "summary.csv")
    if write_manifest_file:
        write_manifest(out)
    return summary


def compare(cfg: ExperimentConfig) -> tuple[RunSummary, RunSummary]:
    """Vanilla and curiosity arms on identical seeds, plus the speedup of the latter.

    Writes ``vanilla/`` and ``curiosity/`` run directories and a top-level
    ``comparison.csv``.
    """
    cfg.validate()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    vanilla = run_experiment(cfg.replace(curiosity=False, out_dir=str(out / "vanilla")), False)
    curious = run_experiment(cfg.replace(curiosity=True, out_dir=str(out / "curiosity")), False)
    if vanilla.ok_seeds and curious.ok_seeds:
        curious.speedup = compute_speedup(
            curious.aggregate_curve(), vanilla.aggregate_curve(), cfg.smooth_window
        )
        curious.write_csv(out / "curiosity" / "summary.csv")
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["arm", "n_ok", "n_success", "median_first_success_timestep",
                    "q25_final_reward", "median_final_reward", "q75_final_reward",
                    "speedup", "speedup_inverted"])
        for name, s in (("vanilla", vanilla), ("curiosity", curious)):
            q = s.quartiles or (None, None, None)
            sp = s.speedup
            w.writerow([name, len(s.ok_seeds), sum(t is not None for t in s.first_success),
                        _fmt(s.median_first_success()), _fmt(q[0]), _fmt(q[1]), _fmt(q[2]),
                        _fmt(sp.ratio if sp else None), _fmt(sp.inverted if sp else None)])
    write_manifest(out)
    return vanilla, curious


# -- curiosity surface ------------------------------------------------------

def surface_grid(resolution: int, bounds=MOUNTAINCAR_SURFACE_BOUNDS) -> np.ndarray:
    """Row-major grid of states, position varying fastest."""
    (x0, x1), (v0, v1) = bounds
    xs = np.linspace(x0, x1, resolution)
    vs = np.linspace(v0, v1, resolution)
    X, V = np.meshgrid(xs, vs)
    return np.column_stack([X.ravel(), V.ravel()])


def export_curiosity_surface(cs: cur.CuriosityState, env_id: str, resolution: int, path,
                             visited=None) -> np.ndarray:
    """Write curiosity over a uniform state grid to ``path`` (CSV: x, v, curiosity).

    ``visited`` states, if given, go to a sibling ``*_visited.csv`` for overlay.
    Returns the (resolution**2, 3) array that was written.
    """
    env = make_env(env_id)
    if env.spec.obs_dim != 2:
        raise UnsupportedOperation(f"{env_id} has a {env.spec.obs_dim}-D state; surfaces need 2-D")
    if resolution < 2:
        raise InvalidArgument("resolution must be at least 2")
    grid = surface_grid(resolution)
    values = cur.curiosity_rewards(cs, grid)
    table = np.column_stack([grid, values])
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "v", "curiosity"])
        w.writerows([[repr(float(a)) for a in row] for row in table])
    if visited is not None:
        with open(path.with_name(path.stem + "_visited.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "v"])
            w.writerows([[repr(float(a)) for a in row] for row in np.asarray(visited)])
    return table


def band_mean(table: np.ndarray, x_low: float, x_high: float) -> float:
    """Mean curiosity over grid rows with position in ``[x_low, x_high]``."""
    mask = (table[:, 0] >= x_low) & (table[:, 0] <= x_high)
    return float(table[mask, 2].mean())


def confined_episode(n_steps: int = 200, x_range=(-1.2, -0.75), seed: int = 0) -> np.ndarray:
    """Mountaincar-shaped observation sequence that never leaves ``x_range``.

    A bounded random walk in (position, velocity); used to probe how one
    episode's worth of data reshapes the curiosity surface.
    """
    rng = np.random.default_rng(seed)
    lo, hi = x_range
    x = rng.uniform(lo, hi)
    v = 0.0
    states = []
    for _ in range(n_steps):
        v = float(np.clip(v + rng.normal(0.0, 0.003), -0.02, 0.02))
        x += v
        if x < lo or x > hi:
            x = min(max(x, lo), hi)
            v = -v
        states.append((x, v))
    return np.array(states)


def load_demos_or_generate(env_id: str, path=None, n: int = 2000, noise_std: float = 0.1,
                           seed: int = 0) -> DemoSet:
    if path is not None:
        return DemoSet.from_csv(path)
    return generate_demos(env_id, n, noise_std, seed)
