import csv
import math

import numpy as np
import pytest

from pinnlab.netjet import DivergenceError, init_params
from pinnlab.train import (
    RECORD_COLUMNS, AdamState, SchedulePlan, adam_step, checkpoint_table, evaluate_params, read_table,
    reload_loss,
    sweep, train_run,
)


def test_adam_zero_gradient_is_a_fixed_point():
    theta = np.array([1.0, -2.0, 3.0])
    state = AdamState.fresh(3, 0.1)
    for _ in range(5):
        state, new = adam_step(state, theta, np.zeros(3))
        np.testing.assert_array_equal(new, theta)


def test_adam_first_step_has_size_lr():
    # bias correction makes the first update lr * sign(g) up to eps_hat
    state = AdamState.fresh(3, 0.01)
    _, new = adam_step(state, np.zeros(3), np.array([5.0, -0.2, 1e3]))
    np.testing.assert_allclose(new, [-0.01, 0.01, -0.01], rtol=1e-6)


def test_adam_minimises_quadratic():
    theta = np.array([1.0])
    state = AdamState.fresh(1, 0.1)
    for k in range(500):
        state.lr = 0.1 * 0.5 ** (k // 100)
        state, theta = adam_step(state, theta, 2 * theta)
    assert abs(theta[0]) < 1e-3


def test_adam_rejects_nonfinite_gradient():
    with pytest.raises(DivergenceError):
        adam_step(AdamState.fresh(2), np.zeros(2), np.array([1.0, np.nan]))


def test_schedule_restarts_and_halves():
    plan = SchedulePlan(segments=4, steps_per_segment=100, lr0=1e-3, decay_every=None, restart_lr=True)
    assert [plan.lr(s) for s in (0, 49, 50, 99, 100, 150)] == [1e-3, 1e-3, 5e-4, 5e-4, 1e-3, 5e-4]
    assert plan.window(1, 2.0) == 0.5 and plan.window(4, 2.0) == 2.0
    assert plan.total_steps == 400
    assert SchedulePlan(steps_per_segment=100, lr0=1e-3, decay_every=25, restart_lr=True).lr(99) == 1e-3 / 8
    glob = SchedulePlan(steps_per_segment=100, lr0=1e-3, decay_every=150, restart_lr=False)
    assert [glob.lr(s) for s in (0, 149, 150, 299, 300)] == [1e-3, 1e-3, 5e-4, 5e-4, 2.5e-4]
    with pytest.raises(ValueError):
        SchedulePlan(lr0=0.0)


def test_training_smoke(tiny_config):
    cfg = tiny_config.with_overrides({"network.widths": [3, 32, 32, 5], "sampling.n_int": 512,
                                      "schedule.steps_per_segment": 50})
    spec = cfg.network_spec()
    initial = evaluate_params(spec, init_params(spec, cfg.seed).values, cfg)["loss"]
    res = train_run(cfg)
    assert len(res.records) == 200
    # same full-window evaluation batch before and after
    assert evaluate_params(res.spec, res.theta, cfg)["loss"] < initial
    rows = read_table(res.run_dir / "records.csv")
    assert tuple(rows[0]) == RECORD_COLUMNS and len(rows) == 200
    assert [int(r["segment"]) for r in rows[::50]] == [1, 2, 3, 4]
    assert (res.run_dir / "checkpoints" / "final.json").exists()
    assert res.manifest["config_hash"] and res.manifest["seeds"]["master"] == 0


def test_training_is_deterministic_apart_from_wall_clock(tiny_config, tmp_path):
    a = train_run(tiny_config, tmp_path / "a")
    b = train_run(tiny_config, tmp_path / "b")
    np.testing.assert_array_equal(a.theta, b.theta)
    for ra, rb in zip(a.records, b.records):
        assert {k: v for k, v in ra.items() if k != "wall_ms"} == {k: v for k, v in rb.items() if k != "wall_ms"}


def test_segment_boundaries_are_continuous(tiny_config, tmp_path):
    res = train_run(tiny_config.with_overrides({"schedule.steps_per_segment": 30}), tmp_path / "r")
    losses = [r["loss_total"] for r in res.records]
    # the window grows, so the loss may jump, but parameters carry over: no reset to the initial level
    assert losses[30] < 10 * max(losses[:30]) and math.isfinite(losses[-1])


def test_ladder_unreached_targets_leave_no_checkpoint(tiny_config):
    res = train_run(tiny_config.with_overrides({"ladder": [1e-12]}))
    assert res.checkpoints == [] and res.manifest["ladder_checkpoints"] == []


def test_ladder_checkpoint_reloads_exactly(tiny_config):
    cfg = tiny_config.with_overrides({"ladder": [1e6, 1e5]})
    res = train_run(cfg)
    assert [c["target"] for c in res.checkpoints] == [1e6, 1e5]
    assert all(c["step"] >= 180 for c in res.checkpoints)  # final segment only
    for c in res.checkpoints:
        assert reload_loss(res.run_dir / c["path"], cfg) == pytest.approx(c["loss"], rel=1e-12)
    rows = checkpoint_table(res.run_dir, cfg)
    assert [r["source"] for r in rows] == ["ladder:1e+06", "ladder:1e+05", "final"]
    assert all(r["err"] > 0 for r in rows)


def test_divergence_is_reported(tiny_config):
    with pytest.raises(DivergenceError):
        train_run(tiny_config.with_overrides({"schedule.lr0": 50.0, "schedule.steps_per_segment": 100}))


def test_sweep_table(tiny_config, tmp_path):
    cfg = tiny_config.with_overrides({"ladder": []})
    rows = sweep(cfg, [0, 1, 2], [8, 16], tmp_path / "sw", workers=2)
    assert len(rows) == 6 and all(r["status"] == "ok" for r in rows)
    with open(tmp_path / "sw" / "sweep.csv") as fh:
        table = list(csv.DictReader(fh))
    assert len(table) == 6 and {int(r["steps"]) for r in table} == {8, 16}
    assert all(float(r["err"]) > 0 for r in table)


def test_empty_sweep(tiny_config, tmp_path):
    assert sweep(tiny_config, [], [8], tmp_path / "empty") == []
    assert read_table(tmp_path / "empty" / "sweep.csv") == []


def test_windowed_minimum_loss_never_rises(tiny_config):
    cfg = tiny_config.with_overrides({"schedule.segments": 1, "schedule.steps_per_segment": 1500,
                                      "schedule.decay_every": 500})
    losses = np.array([r["loss_total"] for r in train_run(cfg).records])
    mins = [losses[k:k + 500].min() for k in range(0, 1500, 500)]
    assert all(b <= a for a, b in zip(mins, mins[1:]))


def test_longer_budgets_reach_lower_median_loss(tiny_config, tmp_path):
    rows = sweep(tiny_config.with_overrides({"ladder": []}), range(5), [40, 400], tmp_path / "sw")
    med = {b: np.median([r["loss"] for r in rows if r["steps"] == b]) for b in (40, 400)}
    assert med[400] <= med[40]
