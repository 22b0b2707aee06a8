"""ADAM training with an expanding time-window schedule, run records and sweeps."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pinnlab.netjet import DivergenceError, NetworkSpec, init_params, load_checkpoint, save_checkpoint
from pinnlab.loss import LossWeights, jit_value_and_grad, make_loss_fn
from pinnlab.sampling import sample_batch

log = logging.getLogger(__name__)

RECORD_COLUMNS = ("step", "segment", "lr", "loss_total", "loss_mom", "loss_mu", "loss_ch",
                  "loss_div", "loss_ic", "loss_bc", "err_phi", "err_u", "wall_ms")
DIVERGENCE_LIMIT = 1e6


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-3) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr)


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected ADAM update. Returns a new state and new parameters."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape:
        raise ValueError(f"gradient shape {grad.shape} != parameter shape {theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    new = AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps_hat)
    return new, theta


@dataclass(frozen=True)
class SchedulePlan:
    segments: int = 4
    steps_per_segment: int = 12500
    lr0: float = 1e-2
    decay: float = 0.5
    decay_every: int | None = 10000
    restart_lr: bool = False

    def __post_init__(self):
        if self.segments < 1 or self.steps_per_segment < 1:
            raise ValueError("segments and steps_per_segment must be >= 1")
        if not (self.lr0 > 0 and 0 < self.decay <= 1):
            raise ValueError("need lr0 > 0 and 0 < decay <= 1")

    @property
    def interval(self) -> int:
        return self.decay_every or max(1, self.steps_per_segment // 2)

    @property
    def total_steps(self) -> int:
        return self.segments * self.steps_per_segment

    def window(self, segment: int, T: float) -> float:
        """Right end of the time window trained in ``segment`` (1-based)."""
        return T * segment / self.segments

    def lr(self, step: int) -> float:
        """Learning rate at global step ``step`` (0-based)."""
        local = step % self.steps_per_segment if self.restart_lr else step
        return self.lr0 * self.decay ** (local // self.interval)


def batch_seed(master: int, step: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master), int(step)])


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()[:16]


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


@dataclass
class RunResult:
    run_dir: Path
    theta: np.ndarray
    spec: NetworkSpec
    records: list[dict] = field(default_factory=list)
    checkpoints: list[dict] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def train_run(config, out_dir=None, *, record_wall_clock: bool = True) -> RunResult:
    """Train one network described by a :class:`pinnlab.config.RunConfig`.

    Writes ``records.csv``, ``manifest.json`` and ``checkpoints/`` under the
    run directory. Raises :class:`DivergenceError` when the loss blows up.
    """
    from pinnlab.analysis import mc_l2_error  # circular at import time

    run_dir = Path(out_dir or config.output_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    problem = config.problem_config()
    spec = config.network_spec()
    weights = config.loss_weights()
    plan = config.schedule_plan()
    counts = config.sampling.counts
    master = config.seed
    ladder = sorted(config.ladder, reverse=True)
    pending = list(ladder)

    theta = init_params(spec, master).values
    state = AdamState.fresh(theta.size, plan.lr0)
    step_fn = jit_value_and_grad(make_loss_fn(spec, problem, weights, config.sampling.slabs))

    records, checkpoints = [], []
    t_start = time.perf_counter()
    step = 0
    last_loss = math.nan
    for segment in range(1, plan.segments + 1):
        window = problem.domain.with_T(plan.window(segment, problem.domain.T))
        for _ in range(plan.steps_per_segment):
            batch = sample_batch(window, counts, batch_seed(master, step))
            (total, terms), grad = step_fn(theta, batch.arrays())
            total = float(total)
            if not math.isfinite(total) or total > DIVERGENCE_LIMIT:
                raise DivergenceError(f"step {step}: loss {total} (segment {segment}, lr {state.lr:g})")
            state.lr = plan.lr(step)
            rec = {"step": step, "segment": segment, "lr": state.lr, "loss_total": total}
            grouped = {"loss_mom": 0.0, "loss_mu": 0.0, "loss_ch": 0.0, "loss_div": 0.0,
                       "loss_ic": 0.0, "loss_bc": 0.0}
            for k, v in terms.items():
                key = ("loss_ic" if k.startswith("ic_") else "loss_bc" if k.startswith("bc_")
                       else f"loss_{k}")
                if key in grouped:
                    grouped[key] += float(v)
            rec.update(grouped)
            rec["err_phi"] = rec["err_u"] = None
            every = config.evaluation.every
            if every and problem.mode == "manufactured" and (step % every == 0):
                errs = mc_l2_error(spec, theta, problem, at="space-time", n=config.evaluation.n_points,
                                   seed=config.evaluation.seed)
                rec["err_phi"] = errs["phi"].value
                rec["err_u"] = errs["u"].value if "u" in errs else None
            rec["wall_ms"] = (time.perf_counter() - t_start) * 1e3 if record_wall_clock else 0.0
            records.append(rec)

            if segment == plan.segments or not config.ladder_final_segment_only:
                while pending and total <= pending[0]:
                    target = pending.pop(0)
                    path = ckpt_dir / f"ladder_{target:.0e}"
                    save_checkpoint(path, spec, theta, seed=master, step=step, loss=total,
                                    target=target, batch_step=step, batch_T=window.T)
                    checkpoints.append({"target": target, "step": step, "loss": total,
                                        "path": str(path.with_suffix(".json").relative_to(run_dir))})

            state, theta = adam_step(state, theta, grad)
            last_loss = total
            step += 1
        log.info("segment %d/%d done: loss %.3e", segment, plan.segments, last_loss)

    final = ckpt_dir / "final"
    save_checkpoint(final, spec, theta, seed=master, step=step, loss=last_loss, target=None,
                    batch_step=None, batch_T=problem.domain.T)

    with open(run_dir / "records.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for rec in records:
            w.writerow([_fmt(rec[c]) for c in RECORD_COLUMNS])

    cfg_dict = config.to_dict()
    manifest = {
        "config_hash": config_hash(cfg_dict),
        "config": cfg_dict,
        "seeds": {"master": master, "init": master, "batch": "SeedSequence([master, step])"},
        "spec": spec.to_dict(),
        "loss_convention": "squared empirical norms summed with term weights",
        "final": {"step": step, "last_batch_loss": last_loss},
        "ladder_checkpoints": checkpoints,
        "artifacts": {"records": "records.csv", "final_checkpoint": "checkpoints/final.json"},
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return RunResult(run_dir, theta, spec, records, checkpoints, manifest)


def reload_loss(checkpoint, config) -> float:
    """Recompute the loss a ladder checkpoint recorded, on the batch it was recorded with."""
    spec, params, header = load_checkpoint(checkpoint)
    problem = config.problem_config()
    window = problem.domain.with_T(header["batch_T"])
    batch = sample_batch(window, config.sampling.counts, batch_seed(header["seed"], header["batch_step"]))
    fn = jit_value_and_grad(make_loss_fn(spec, problem, config.loss_weights(), config.sampling.slabs))
    (total, _), _ = fn(params.values, batch.arrays())
    return float(total)


SWEEP_COLUMNS = ("run", "seed", "steps", "source", "loss", "loss_unweighted",
                 "err_phi", "err_u", "err", "err_phi_T", "err_u_T", "err_T", "status")


def evaluate_params(spec, theta, config) -> dict:
    """Loss on a large fixed batch over the full window plus MC errors (space-time and t = T)."""
    from pinnlab.analysis import mc_l2_error
    from pinnlab.loss import empirical_loss

    problem = config.problem_config()
    ev = config.evaluation
    batch = sample_batch(problem.domain, ev.loss_counts, ev.seed)
    total, bd = empirical_loss(spec, theta, batch, config.loss_weights(), problem, config.sampling.slabs)
    row = {"loss": total, "loss_unweighted": bd.unweighted}
    for at, suffix in (("space-time", ""), ("final-time", "_T")):
        errs = mc_l2_error(spec, theta, problem, at=at, n=ev.n_points, seed=ev.seed)
        e_phi = errs["phi"].value
        e_u = errs["u"].value if "u" in errs else 0.0
        row[f"err_phi{suffix}"] = e_phi
        row[f"err_u{suffix}"] = e_u if "u" in errs else None
        row[f"err{suffix}"] = math.hypot(e_phi, e_u)
    return row


def checkpoint_table(run_dir, config) -> list[dict]:
    """Evaluate every ladder checkpoint of a run (plus the final parameters)."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    entries = [(c["path"], f"ladder:{c['target']:.0e}") for c in manifest["ladder_checkpoints"]]
    entries.append((manifest["artifacts"]["final_checkpoint"], "final"))
    rows = []
    for rel, source in entries:
        spec, params, header = load_checkpoint(run_dir / rel)
        row = {"run": run_dir.name, "seed": header["seed"], "steps": header["step"], "source": source,
               "status": "ok"}
        row.update(evaluate_params(spec, params.values, config))
        rows.append(row)
    return rows


def _sweep_one(base, seed: int, budget: int, root: Path) -> dict:
    name = f"seed{seed}_steps{budget}"
    row = {"run": name, "seed": seed, "steps": budget, "source": "final"}
    try:
        cfg = base.with_overrides({"seed": seed,
                                   "schedule.steps_per_segment": max(1, budget // base.schedule.segments)})
        res = train_run(cfg, root / name)
        row.update(evaluate_params(res.spec, res.theta, cfg))
        row["status"] = "ok"
    except Exception as exc:  # a failed run becomes a row, the sweep continues
        log.warning("sweep run %s failed: %s", name, exc)
        row["status"] = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
    return row


def sweep(base, seeds, budgets, out_dir=None, workers: int | None = None) -> list[dict]:
    """Train one network per (seed, budget) and tabulate final loss against MC error.

    Writes ``sweep.csv`` under ``out_dir``. Failed runs are kept as rows with
    a ``failed: ...`` status.
    """
    if base.problem.mode != "manufactured":
        raise ValueError("sweeps need a manufactured problem to measure errors")
    root = Path(out_dir or base.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(s, b) for s in seeds for b in budgets]
    workers = workers or int(os.environ.get("PINNLAB_THREADS", "1"))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda job: _sweep_one(base, job[0], job[1], root), jobs))
    else:
        rows = [_sweep_one(base, s, b, root) for s, b in jobs]
    write_table(root / "sweep.csv", rows)
    return rows


def write_table(path, rows) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in SWEEP_COLUMNS})
    return path


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
