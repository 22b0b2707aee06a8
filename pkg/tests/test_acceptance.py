"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are collected and repeated in the pytest terminal summary. Run
``python3 tests/test_acceptance.py`` to execute the suite on its own.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from pinnlab.analysis import (
    BoundParams, LIN_A, LIN_B, c_lambda, fit_convergence, lincond_demo, theorem1_bound,
)
from pinnlab.config import RunConfig
from pinnlab.loss import LossWeights, exact_loss, residuals_ch, residuals_nsch, boundary_residuals, \
    initial_residuals
from pinnlab.netjet import NetworkSpec, init_params, loss_grad
from pinnlab.plots import table_pairs
from pinnlab.problems import ProblemConfig
from pinnlab.sampling import empirical_norm, sample_batch
from pinnlab.train import checkpoint_table, evaluate_params, train_run

from fd import jet_fd_error

RESULTS: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def test_criterion_1_derivative_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(100):
        depth = rng.integers(1, 4)
        widths = (3, *rng.integers(2, 9, depth), 5)
        spec = NetworkSpec(tuple(int(w) for w in widths))
        theta = init_params(spec, int(rng.integers(1 << 30)))
        point = rng.uniform([0, 0, 0], [1, 1, 2])
        worst = max(worst, jet_fd_error(spec, theta, point, h=1e-4))

    spec = NetworkSpec((3, 8, 8, 5))
    assert spec.n_params <= 200
    theta = init_params(spec, 3).values
    pts = rng.uniform([0, 0, 0], [1, 1, 2], size=(16, 3))

    def f(th):
        import jax.numpy as jnp
        from pinnlab.netjet import forward_jet
        j = forward_jet(spec, th, pts)
        return sum(jnp.sum(j[n].value ** 2 + j[n].d2[:, 2] ** 2) for n in spec.output_names)

    _, g = loss_grad(spec, theta, f)
    h, gerr = 1e-5, 0.0
    scale = np.max(np.abs(g))
    for i in range(spec.n_params):
        e = np.zeros_like(theta)
        e[i] = h
        fd = (float(f(theta + e)) - float(f(theta - e))) / (2 * h)
        gerr = max(gerr, abs(fd - g[i]) / scale)
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-5 and gerr <= 1e-4 and dt < 60,
           f"jet vs FD max rel {worst:.2e} (<=1e-5), grad vs FD {gerr:.2e} (<=1e-4), {dt:.1f}s (<60s)")


def test_criterion_2_manufactured_identity():
    pts = np.random.default_rng(0).uniform([0, 0, 0], [1, 1, 2], size=(1000, 3))
    worst_res, worst_loss = 0.0, 0.0
    for system in ("NSCH", "CH"):
        p = ProblemConfig(system=system)
        ms = p.manufactured
        fn = residuals_nsch if system == "NSCH" else residuals_ch
        res = dict(fn(ms.fields(pts), p, pts))
        b = sample_batch(p.domain, (1000, 1000, 1000), 1)
        arr = b.arrays()
        res.update(boundary_residuals(ms.fields(arr["boundary"]), p, arr["boundary"], arr["normals"]))
        res.update(initial_residuals(ms.fields(arr["initial"]), p, arr["initial"]))
        worst_res = max(worst_res, max(float(np.max(np.abs(np.asarray(v)))) for v in res.values()))
        total, _ = exact_loss(b, LossWeights(), p)
        worst_loss = max(worst_loss, total)
    report(2, worst_res <= 1e-10 and worst_loss <= 1e-8,
           f"max |residual| {worst_res:.2e} (<=1e-10), white-box loss {worst_loss:.2e} (<=1e-8)")


def test_criterion_3_linear_conditioning():
    r = lincond_demo()
    Ax = [sum(Fraction(a) for a in row) for row in LIN_A]
    dx = [Fraction(v).limit_denominator(10) for v in r.delta_x_exact]
    ok = (Ax == [Fraction(b) for b in LIN_B]
          and dx == [Fraction(82, 10), Fraction(-136, 10), Fraction(35, 10), Fraction(-21, 10)]
          and r.kappa_inf == 4488.0 and r.amplification >= 50)
    report(3, ok, f"A*1 = {[int(v) for v in Ax]}, dx = {[float(v) for v in dx]}, "
                  f"kappa_inf = {r.kappa_inf:g}, amplification = {r.amplification:.1f} (>=50)")


def test_criterion_4_fit_recovery():
    loss = np.logspace(-4, 0, 12)
    line = lambda l: 10 ** (1.153 * np.log10(l) - 1.044)
    fit = fit_convergence(list(zip(loss, line(loss))))
    rng = np.random.default_rng(11)
    lo = 10 ** rng.uniform(-4, 0, 30)
    noisy = fit_convergence(list(zip(lo, line(lo) * 10 ** rng.uniform(-0.05, 0.05, 30))))
    ok = (abs(fit.n - 1.153) <= 1e-9 and abs(fit.log10C + 1.044) <= 1e-9
          and abs(noisy.n - 1.153) <= 0.05 * 1.153)
    report(4, ok, f"noise-free n = {fit.n:.12f}, log10C = {fit.log10C:.12f}; noisy n = {noisy.n:.4f} "
                  f"(within 5% of 1.153)")


def test_criterion_5_bound():
    eps, a2 = 0.3, 2.5
    at0 = theorem1_bound(BoundParams(eps=eps, t=0.0, alpha2=a2, lam=0.7, c8=2.0, c9=1.5))
    ts = np.arange(0.0, 4.01, 0.5)
    vals = [theorem1_bound(BoundParams(eps=eps, t=t, lam=0.7, c8=2.0, c9=1.5)) for t in ts]
    mono = all(b >= a for a, b in zip(vals, vals[1:]))
    b1 = theorem1_bound(BoundParams(eps=eps, t=1.7, lam=0.7))
    b2 = theorem1_bound(BoundParams(eps=3 * eps, t=1.7, lam=0.7))
    scaling = math.isclose(b2, 9 * b1, rel_tol=1e-13)
    lams = np.logspace(-2, 4, 60)
    cl = [c_lambda(l, 0.8) for l in lams]
    dec = all(b < a for a, b in zip(cl, cl[1:])) and abs(cl[-1] - 0.8) < 1e-8
    ok = at0 == eps ** 2 / a2 and mono and scaling and dec
    report(5, ok, f"t=0 value {at0!r} == eps^2/alpha2; monotone in t: {mono}; eps^2 scaling: {scaling}; "
                  f"C_lambda decreasing to C8: {dec}")


def test_criterion_7_monte_carlo():
    t0 = time.perf_counter()
    b = sample_batch(ProblemConfig().domain, (4096, 8, 8), 0)
    one = empirical_norm(np.ones(4096), "L2L2", measure=2.0)
    sds = {}
    for n in (10 ** 3, 10 ** 4, 10 ** 5):
        ests = [empirical_norm(sample_batch(ProblemConfig().domain, (n, 1, 1), s).interior[:, 0], "L2L2",
                               measure=2.0) for s in range(30)]
        sds[n] = float(np.std(ests, ddof=1))
    ratios = [sds[10 ** 3] / sds[10 ** 4] / math.sqrt(10), sds[10 ** 4] / sds[10 ** 5] / math.sqrt(10)]
    dt = time.perf_counter() - t0
    ok = one == math.sqrt(2.0) and all(0.5 <= r <= 2.0 for r in ratios) and dt < 60 and b.counts[0] == 4096
    report(7, ok, f"norm(1) = {one!r} (sqrt 2), sd ratio / sqrt(10) = {ratios[0]:.2f}, {ratios[1]:.2f} "
                  f"(within [0.5, 2]), {dt:.1f}s")


@pytest.mark.slow
def test_criterion_6_end_to_end(tmp_path_factory):
    """Default config on the toy problem, then a fit over the run's checkpoints."""
    t0 = time.perf_counter()
    out = tmp_path_factory.mktemp("desk") / "run"
    cfg = RunConfig().with_overrides({"output_dir": str(out)})
    plan = cfg.schedule_plan()
    spec = cfg.network_spec()
    initial = evaluate_params(spec, init_params(spec, cfg.seed).values, cfg)["loss_unweighted"]
    res = train_run(cfg)
    final = evaluate_params(res.spec, res.theta, cfg)
    rows = checkpoint_table(res.run_dir, cfg)
    pairs = table_pairs(rows, "loss", "err")
    fit = fit_convergence(pairs) if len(pairs) >= 2 else None
    dt = time.perf_counter() - t0
    (res.run_dir / "acceptance.json").write_text(json.dumps(
        {"initial_unweighted": initial, "final": final, "checkpoints": len(rows),
         "fit": fit.to_dict() if fit else None, "seconds": dt}, indent=2))
    drop = initial / final["loss_unweighted"]
    ok = (plan.segments == 4 and plan.total_steps <= 50_000 and drop >= 100
          and final["loss_unweighted"] <= 1e-2 and len(rows) >= 8 and fit is not None
          and 0.5 <= fit.n <= 2.0 and fit.C <= 1.0 and dt <= 1800)
    fit_txt = f"n = {fit.n:.3f}, C = {fit.C:.3g}" if fit else "no fit"
    report(6, ok, f"{plan.segments} segments x {plan.steps_per_segment} steps; unweighted loss "
                  f"{initial:.3g} -> {final['loss_unweighted']:.3g} (drop {drop:.0f}x, need >=100x and <=1e-2); "
                  f"err {final['err']:.3g}; {len(rows)} checkpoints (>=8); {fit_txt} "
                  f"(n in [0.5, 2], C <= 1); {dt / 60:.1f} min (<=30)")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
