"""Seeded experiment execution and on-disk run artifacts.

Layout::

    <out>/<experiment>/<variant>/seed<k>/meta.json
                                        /iterations.log   # JSON lines
                                        /evals.log        # JSON lines
                                        /summary.json
                                        /DIVERGED         # only when truncated
    <out>/<experiment>/comparison.csv
    <out>/<experiment>/experiment.json
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from metatrust import __version__, kernels
from metatrust._accel import NUMBA_ENABLED
from metatrust.baselines import ControllerVariant, make_controller_variant
from metatrust.envs import Env
from metatrust.errors import ConfigError, DataQualityError
from metatrust.harness.config import ExperimentConfig
from metatrust.learner import (
    Learner,
    Policy,
    RolloutState,
    collect_rollout,
    compute_gae,
    ppo_update,
    td_variance_weights,
)
from metatrust.metrics import (
    SUMMARY_COLUMNS,
    MetricSummary,
    RunRecord,
    bootstrap_rank_stability,
    final_return,
    run_failed,
    summarize,
)
from metatrust.rng import run_streams, substream
from metatrust.signals import compute_vpes, fill_window
from metatrust.trust import new_window

log = logging.getLogger(__name__)

RUN_FILES = ("meta.json", "iterations.log", "evals.log", "summary.json")
DIVERGED_MARKER = "DIVERGED"


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating,)):
        return _clean(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def dumps(record: dict) -> str:
    return json.dumps(_clean(record), separators=(",", ":"), allow_nan=False)


def run_dir(cfg: ExperimentConfig, variant: str, seed: int) -> Path:
    return Path(cfg.out) / cfg.name / variant / f"seed{seed}"


def evaluate(policy: Policy, spec, episodes: int, rng: np.random.Generator) -> list[float]:
    """Clean-reward returns of the mean-action policy."""
    out = []
    env = Env(spec, rng)
    for _ in range(episodes):
        state = env.reset()
        total, done = 0.0, False
        while not done:
            mean, _, _ = kernels.forward_single(policy.flat, policy.layout.sizes, spec.observe(state))
            state, r, done = env.step(mean)
            total += r
        out.append(total)
    return out


def run_single(cfg: ExperimentConfig, variant: ControllerVariant, seed: int, write: bool = True) -> RunRecord:
    """One seed of the training loop under one controller variant."""
    spec = cfg.env_spec
    ppo = cfg.learner
    streams = run_streams(cfg.master_seed, seed)
    n_iters = cfg.n_iterations
    policy = Policy.create(spec.state_dim, spec.action_dim, ppo.hidden, streams["policy-init"], ppo.init_log_std)
    learner = Learner(policy, ppo)
    controller = make_controller_variant(variant, cfg.base_lr, n_iters, cfg.controller)
    window = new_window(cfg.controller)
    rollout = RolloutState(Env(spec, streams["env-reset"]))
    record = RunRecord(seed=seed, variant=variant.kind, env=spec.name, failure_threshold=spec.failure_threshold)

    d = run_dir(cfg, variant.kind, seed)
    files = {}
    if write:
        d.mkdir(parents=True, exist_ok=True)
        marker = d / DIVERGED_MARKER
        if marker.exists():
            marker.unlink()
        meta = {
            "config": cfg.echo(),
            "variant": _clean(variant.__dict__),
            "seed": seed,
            "env_spec": spec.echo(),
            "n_iterations": n_iters,
            "code_version": __version__,
            "numba": NUMBA_ENABLED,
        }
        (d / "meta.json").write_text(json.dumps(_clean(meta), indent=2, sort_keys=True) + "\n")
        files["iter"] = open(d / "iterations.log", "w")
        files["eval"] = open(d / "evals.log", "w")

    reason = None
    try:
        for t in range(1, n_iters + 1):
            try:
                traj = collect_rollout(
                    rollout, policy, ppo.rollout_length, cfg.corruption,
                    streams["rollout-action"], streams["corruption"],
                )
                compute_gae(traj, ppo.gamma, ppo.lam)
                fill_window(window, traj.deltas)
                vpes = compute_vpes(window)
                out = controller.step(vpes, list(learner.grad_norms), t)
                weights = td_variance_weights(traj.deltas, ppo.sigma_ref)
                stats = ppo_update(learner, traj, weights, out.effective_lr, streams["minibatch-shuffle"])
                if not np.all(np.isfinite(policy.flat)):
                    raise DataQualityError("non-finite parameters after update")
            except DataQualityError as exc:
                reason = f"iteration {t}: {exc}"
                break
            row = out.to_dict()
            row.update(
                mean_return=float(np.mean(traj.episode_returns)) if traj.episode_returns else None,
                episodes=len(traj.episode_returns),
                loss=stats["loss"],
                grad_norm=stats["grad_norm"],
                grad_norm_var=stats["grad_norm_var"],
                skipped=stats["skipped"],
                corrupted_steps=int(np.count_nonzero(traj.offsets)),
                corruption_digest=hashlib.sha256(traj.offsets.tobytes()).hexdigest()[:16],
            )
            record.log.append(row)
            if write:
                files["iter"].write(dumps(row) + "\n")
            if t % cfg.eval.every == 0 or t == n_iters:
                try:
                    rets = evaluate(policy, spec, cfg.eval.episodes, streams["eval"])
                except DataQualityError as exc:
                    reason = f"evaluation at iteration {t}: {exc}"
                    break
                record.eval_returns.append(float(np.mean(rets)))
                if write:
                    files["eval"].write(dumps({"iteration": t, "return": float(np.mean(rets)), "episodes": rets}) + "\n")
    finally:
        for f in files.values():
            f.close()

    record.diverged = reason is not None
    if record.diverged:
        log.warning("%s seed %d diverged: %s", variant.kind, seed, reason)
    if write:
        if reason is not None:
            (d / DIVERGED_MARKER).write_text(reason + "\n")
        summary = {
            "variant": variant.kind,
            "seed": seed,
            "iterations_completed": len(record.log),
            "diverged": record.diverged,
            "eval_returns": record.eval_returns,
            "final_return": final_return(record, cfg.eval.tail_fraction) if (record.eval_returns or record.diverged) else None,
            "failed": run_failed(record, cfg.eval.tail_fraction) if (record.eval_returns or record.diverged) else None,
            "incidents": learner.incidents,
        }
        (d / "summary.json").write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n")
    return record


def _job(args):
    cfg, variant, seed = args
    return run_single(cfg, variant, seed)


def run_experiment(cfg: ExperimentConfig, progress=None) -> list[RunRecord]:
    """Every configured variant over every seed; results ordered by (variant, seed) as configured."""
    jobs = [(cfg, v, s) for v in cfg.variants for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            records = []
            for rec in pool.map(_job, jobs):
                records.append(rec)
                if progress:
                    progress(rec)
    else:
        records = []
        for job in jobs:
            rec = _job(job)
            records.append(rec)
            if progress:
                progress(rec)
    write_comparison(cfg, records)
    return records


def group_by_variant(cfg: ExperimentConfig, records: list[RunRecord]) -> dict[str, list[RunRecord]]:
    groups = {v.kind: [] for v in cfg.variants}
    for r in records:
        groups.setdefault(r.variant, []).append(r)
    return groups


def write_summary_csv(path: Path, summaries: list[MetricSummary]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summaries:
            w.writerow(s.row())


def write_comparison(cfg: ExperimentConfig, records: list[RunRecord]) -> list[MetricSummary]:
    groups = group_by_variant(cfg, records)
    summaries = [summarize(k, rs, cfg.eval.tail_fraction) for k, rs in groups.items() if rs]
    exp = Path(cfg.out) / cfg.name
    write_summary_csv(exp / "comparison.csv", summaries)
    (exp / "experiment.json").write_text(json.dumps(_clean(cfg.echo()), indent=2, sort_keys=True) + "\n")
    return summaries


def run_ablation(cfg: ExperimentConfig, progress=None) -> dict:
    """Paired-noise comparison of at least two variants, with bootstrap rank stability."""
    if len(cfg.variants) < 2:
        raise ConfigError("ablation requires at least two variants")
    records = run_experiment(cfg, progress)
    groups = group_by_variant(cfg, records)
    summaries = [summarize(k, rs, cfg.eval.tail_fraction) for k, rs in groups.items()]
    finals = {k: [final_return(r, cfg.eval.tail_fraction) for r in rs] for k, rs in groups.items()}
    stability = None
    if len(cfg.seeds) >= 2:
        stability = bootstrap_rank_stability(finals, cfg.bootstrap_resamples, substream(cfg.master_seed, 0, "bootstrap"))
    exp = Path(cfg.out) / cfg.name
    paired = verify_paired_noise(exp)
    result = {
        "variants": [v.kind for v in cfg.variants],
        "summaries": [s.__dict__ for s in summaries],
        "final_returns": finals,
        "failures": {k: [run_failed(r, cfg.eval.tail_fraction) for r in rs] for k, rs in groups.items()},
        "bootstrap_rank_stability": stability,
        "paired_noise_identical": paired,
    }
    (exp / "ablation.json").write_text(json.dumps(_clean(result), indent=2) + "\n")
    result["records"] = records
    return result


def read_jsonl(path: Path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def verify_paired_noise(experiment_dir: Path) -> bool:
    """True when every variant saw identical corruption draws at each shared iteration of each seed."""
    experiment_dir = Path(experiment_dir)
    by_seed: dict[str, list[list[str]]] = {}
    for log_path in sorted(experiment_dir.glob("*/seed*/iterations.log")):
        digests = [row["corruption_digest"] for row in read_jsonl(log_path)]
        by_seed.setdefault(log_path.parent.name, []).append(digests)
    if not by_seed:
        return False
    for runs in by_seed.values():
        n = min(len(r) for r in runs)
        if any(r[:n] != runs[0][:n] for r in runs[1:]):
            return False
    return True


def load_record(path: Path) -> RunRecord:
    """Rebuild a :class:`RunRecord` from a run directory."""
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    summary = json.loads((path / "summary.json").read_text())
    rows = read_jsonl(path / "iterations.log")
    evals = [row["return"] for row in read_jsonl(path / "evals.log")]
    return RunRecord(
        seed=meta["seed"],
        variant=meta["variant"]["kind"],
        env=meta["env_spec"]["name"],
        failure_threshold=meta["env_spec"]["failure_threshold"],
        eval_returns=evals,
        log=rows,
        diverged=bool(summary["diverged"]),
    )
