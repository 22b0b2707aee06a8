"""Error measurement, convergence fits, the a-priori CH bound and the 4x4 conditioning example."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Callable, NamedTuple, Sequence

import numpy as np

from pinnlab.netjet import NetworkSpec, forward
from pinnlab.problems import ProblemConfig


class Estimate(NamedTuple):
    value: float
    se: float


def _field_values(spec, theta, points) -> dict[str, np.ndarray]:
    if spec is None:
        # white-box adapter: theta(points) -> {name: Jet2 or array}
        out = theta(points)
        return {k: np.asarray(getattr(v, "value", v)) for k, v in out.items()}
    vals = forward(spec, theta, points)
    return {name: vals[:, k] for k, name in enumerate(spec.output_names)}


def _mc_norm(sq: np.ndarray, measure: float) -> Estimate:
    n = sq.size
    msq = float(np.mean(sq))
    est = math.sqrt(measure * msq)
    se_sq = measure * float(np.std(sq, ddof=1)) / math.sqrt(n) if n > 1 else math.inf
    # delta method for the square root
    se = se_sq / (2.0 * est) if est > 0 else 0.0
    return Estimate(est, se)


def mc_l2_error(spec: NetworkSpec | None, theta, problem: ProblemConfig, at: str = "space-time",
                n: int = 20000, seed: int = 0) -> dict[str, Estimate]:
    """Monte Carlo L2 error of phi (and u for NSCH) against the manufactured solution.

    ``at="space-time"`` estimates the norm over Omega x (0, T); ``"final-time"``
    over Omega at t = T. ``spec=None`` lets ``theta`` be a callable returning
    fields directly.
    """
    ms = problem.manufactured
    if ms is None:
        raise ValueError("errors need a manufactured problem")
    if n < 1:
        raise ValueError("need at least one sample")
    if at not in ("space-time", "final-time"):
        raise ValueError(f"at must be 'space-time' or 'final-time', got {at!r}")
    d = problem.domain
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(d.x_min, d.x_max, n)
    x2 = rng.uniform(d.y_min, d.y_max, n)
    t = rng.uniform(0.0, d.T, n) if at == "space-time" else np.full(n, d.T)
    measure = d.area * d.T if at == "space-time" else d.area
    pts = np.column_stack([x1, x2, t])

    got = _field_values(spec, theta, pts)
    exact = {k: np.asarray(j.value) for k, j in ms.fields(pts).items()}
    out = {"phi": _mc_norm((got["phi"] - exact["phi"]) ** 2, measure)}
    if "u1" in got and problem.system == "NSCH":
        sq = (got["u1"] - exact["u1"]) ** 2 + (got["u2"] - exact["u2"]) ** 2
        out["u"] = _mc_norm(sq, measure)
    return out


@dataclass(frozen=True)
class FitResult:
    n: float
    log10C: float
    C: float
    r2: float
    count: int

    def to_dict(self) -> dict:
        return asdict(self)


def fit_convergence(pairs: Sequence[tuple[float, float]]) -> FitResult:
    """Least-squares line through (log10 loss, log10 error); slope is the order, 10**intercept the constant."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise ValueError("need at least 2 (loss, error) pairs")
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError("loss and error values must be positive and finite")
    x, y = np.log10(arr[:, 0]), np.log10(arr[:, 1])
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-24 * max(1.0, float(x @ x)):
        raise ValueError("degenerate abscissa: all loss values are equal")
    slope = float(xc @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (slope * x + intercept)
    yc = y - y.mean()
    syy = float(yc @ yc)
    r2 = 1.0 - float(resid @ resid) / syy if syy > 0 else 1.0
    return FitResult(slope, intercept, 10.0 ** intercept, r2, len(arr))


def c_lambda(lam: float, c8: float) -> float:
    """Growth constant C8 + 1/(2 lambda^2)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return c8 + 1.0 / (2.0 * lam * lam)


@dataclass(frozen=True)
class BoundParams:
    eps: float
    t: float
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    lam: float = 1.0
    c8: float = 1.0
    c9: float = 1.0

    def __post_init__(self):
        vals = asdict(self).values()
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("bound parameters must be finite")
        if self.eps < 0 or self.t < 0 or self.c8 < 0 or self.c9 < 0:
            raise ValueError("eps, t, C8, C9 must be nonnegative")
        if min(self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.lam) <= 0:
            raise ValueError("alphas and lambda must be positive")

    @property
    def c_lambda(self) -> float:
        return c_lambda(self.lam, self.c8)


def theorem1_bound(p: BoundParams) -> float:
    """Upper bound on the squared L2 error of phi at time t when the CH loss is below eps**2."""
    c = p.c_lambda
    if p.eps == 0.0:
        return 0.0
    try:
        growth = math.exp(c * p.t)
    except OverflowError:
        return math.inf
    window = (1.0 - math.exp(-2.0 * c * p.t)) / 2.0
    inner = p.lam ** 2 / (2.0 * p.alpha1) + p.c9 / p.alpha3 + p.c9 / p.alpha4
    return p.eps ** 2 * growth * (1.0 / p.alpha2 + window * inner)


# 4x4 example of a residual that is small while the error is large
LIN_A = ((10, 7, 8, 7), (7, 5, 6, 5), (8, 6, 10, 9), (7, 5, 9, 10))
LIN_B = (32, 23, 33, 31)
LIN_X = (1, 1, 1, 1)
LIN_DB = (Fraction(1, 10), Fraction(-1, 10), Fraction(1, 10), Fraction(-1, 10))
PRINTED_Y = (Fraction("10.2"), Fraction("-11.6"), Fraction("5.5"), Fraction("5.1"))
PRINTED_DX = (Fraction("9.2"), Fraction("-12.6"), Fraction("4.5"), Fraction("4.1"))


def _matvec(A, x):
    return tuple(sum(Fraction(a) * xi for a, xi in zip(row, x)) for row in A)


def exact_inverse(A) -> list[list[Fraction]]:
    """Gauss-Jordan inverse over the rationals."""
    n = len(A)
    M = [[Fraction(v) for v in row] + [Fraction(int(i == j)) for j in range(n)] for i, row in enumerate(A)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            raise ZeroDivisionError("matrix is singular")
        M[col], M[piv] = M[piv], M[col]
        p = M[col][col]
        M[col] = [v / p for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [a - f * b for a, b in zip(M[r], M[col])]
    return [row[n:] for row in M]


def _inf(v) -> Fraction:
    return max(abs(Fraction(x)) for x in v)


def _inf_mat(A) -> Fraction:
    return max(sum(abs(Fraction(a)) for a in row) for row in A)


@dataclass
class LinCondReport:
    A: list
    A_inv: list
    b: list
    x: list
    delta_b: list
    delta_x_exact: list
    y: list
    residual_inf: float
    error_inf: float
    kappa_inf: float
    amplification: float
    printed_y: list
    printed_delta_x: list
    printed_y_residual: list
    printed_delta_x_residual: list
    notes: list

    def to_dict(self) -> dict:
        return asdict(self)


def _floats(v):
    return [float(x) for x in v]


def lincond_demo() -> LinCondReport:
    """Solve the perturbed 4x4 system exactly and report how much the residual understates the error."""
    A, b, x = LIN_A, LIN_B, LIN_X
    if _matvec(A, x) != tuple(Fraction(v) for v in b):
        raise AssertionError("A x != b")
    Ainv = exact_inverse(A)
    if any(v.denominator != 1 for row in Ainv for v in row):
        raise AssertionError("inverse is not integral")
    dx = _matvec(Ainv, LIN_DB)
    y = tuple(xi + di for xi, di in zip(x, dx))
    kappa = _inf_mat(A) * _inf_mat(Ainv)
    amp = (_inf(dx) / _inf(x)) / (_inf(LIN_DB) / _inf(b))

    res_y = tuple(r - bi for r, bi in zip(_matvec(A, PRINTED_Y), b))
    res_dx = tuple(r - d for r, d in zip(_matvec(A, PRINTED_DX), LIN_DB))
    notes = []
    if res_y != LIN_DB:
        notes.append(f"A*printed_y - b = {_floats(res_y)} differs from delta_b")
    if any(r != 0 for r in res_dx):
        notes.append(f"printed delta_x does not solve A*dx = delta_b; exact solve gives {_floats(dx)}")

    return LinCondReport(
        A=[list(r) for r in A], A_inv=[[int(v) for v in row] for row in Ainv],
        b=list(b), x=list(x), delta_b=_floats(LIN_DB), delta_x_exact=_floats(dx), y=_floats(y),
        residual_inf=float(_inf(LIN_DB)), error_inf=float(_inf(dx)),
        kappa_inf=float(kappa), amplification=float(amp),
        printed_y=_floats(PRINTED_Y), printed_delta_x=_floats(PRINTED_DX),
        printed_y_residual=_floats(res_y), printed_delta_x_residual=_floats(res_dx), notes=notes,
    )


def white_box(problem: ProblemConfig) -> Callable:
    """Adapter exposing the exact manufactured fields as if they were a network."""
    ms = problem.manufactured
    if ms is None:
        raise ValueError("white-box adapter needs a manufactured problem")
    return ms.fields
