"""Pointwise residuals and the weighted empirical loss.

Only the split formulation is used: ``mu`` is its own network output and the
relation ``mu = -lap(phi) + Psi'(phi)`` is penalised as a separate residual,
so no derivative above second order is ever needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import jax
import jax.numpy as jnp
import numpy as np

from pinnlab.netjet import Jet2, NetworkSpec, forward_jet
from pinnlab.problems import ProblemConfig, initial_phi
from pinnlab.sampling import SampleBatch, empirical_norm_sq

INTERIOR_TERMS = ("mom", "mu", "ch", "div")
IC_TERMS = ("ic_u", "ic_phi")
BC_TERMS = ("bc_u", "bc_phi", "bc_mu")
REG_TERMS = ("reg_u", "reg_phi", "reg_mu")


@dataclass(frozen=True)
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0
    alpha4: float = 1.0
    alpha_mu: float = 1.0
    lambda1: float = 0.0
    lambda2: float = 0.0
    w_ic: float = 1000.0
    norm_kind: str = "auto"

    def __post_init__(self):
        vals = [self.alpha1, self.alpha2, self.alpha3, self.alpha4, self.alpha_mu, self.w_ic]
        if not all(math.isfinite(v) and v > 0 for v in vals):
            raise ValueError("alpha weights and w_ic must be positive and finite")
        if not all(math.isfinite(v) and v >= 0 for v in (self.lambda1, self.lambda2)):
            raise ValueError("lambda weights must be nonnegative and finite")
        if self.norm_kind not in ("auto", "L2L2", "L4L2"):
            raise ValueError(f"norm_kind must be auto, L2L2 or L4L2, got {self.norm_kind!r}")

    def resolved_norm(self, system: str) -> str:
        if self.norm_kind != "auto":
            return self.norm_kind
        return "L4L2" if system == "CH" else "L2L2"

    def term_weights(self, system: str) -> dict[str, float]:
        """Weight applied to each breakdown term for the given system."""
        if system == "CH":
            return {"ch": self.alpha1, "mu": self.alpha_mu, "ic_phi": self.alpha2,
                    "bc_phi": self.alpha3, "bc_mu": self.alpha4,
                    "reg_phi": self.lambda1, "reg_mu": self.lambda2}
        return {"mom": 1.0, "mu": 1.0, "ch": 1.0, "div": 1.0,
                "ic_u": self.w_ic, "ic_phi": self.w_ic,
                "bc_u": 1.0, "bc_phi": 1.0, "bc_mu": 1.0,
                "reg_u": self.lambda1, "reg_phi": self.lambda2}


@dataclass
class ResidualBundle:
    interior: dict = field(default_factory=dict)
    boundary: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)

    def items(self):
        for group in (self.interior, self.boundary, self.initial):
            yield from group.items()


@dataclass
class LossBreakdown:
    terms: dict[str, float]
    weights: dict[str, float]
    total: float

    @property
    def unweighted(self) -> float:
        """Sum of the squared residual terms with every weight set to one (regularisers excluded)."""
        return sum(v for k, v in self.terms.items() if not k.startswith("reg_"))

    def grouped(self) -> dict[str, float]:
        t = self.terms
        return {
            "loss_mom": t.get("mom", 0.0), "loss_mu": t.get("mu", 0.0),
            "loss_ch": t.get("ch", 0.0), "loss_div": t.get("div", 0.0),
            "loss_ic": sum(t.get(k, 0.0) for k in IC_TERMS),
            "loss_bc": sum(t.get(k, 0.0) for k in BC_TERMS),
        }


def _require(jets, names):
    missing = [n for n in names if n not in jets]
    if missing:
        raise KeyError(f"network has no output(s) {missing}")


def _lap(j: Jet2):
    return j.d2[..., 0] + j.d2[..., 2]


def _grad(j: Jet2):
    return j.d1[..., :2]


def residuals_nsch(jets: dict[str, Jet2], problem: ProblemConfig, points) -> dict:
    """Interior residuals of the Navier-Stokes-Cahn-Hilliard system."""
    _require(jets, ("u1", "u2", "phi", "mu", "P"))
    u1, u2, phi, mu, P = (jets[k] for k in ("u1", "u2", "phi", "mu", "P"))
    g_u, g_phi = problem.forcing(points)
    pot, visc = problem.potential, problem.viscosity

    u = jnp.stack([u1.value, u2.value], axis=-1)
    # grad_u[..., i, j] = d u_i / d x_j
    grad_u = jnp.stack([_grad(u1), _grad(u2)], axis=-2)
    dt_u = jnp.stack([u1.d1[..., 2], u2.d1[..., 2]], axis=-1)
    advect = jnp.einsum("...j,...ij->...i", u, grad_u)

    div_u = grad_u[..., 0, 0] + grad_u[..., 1, 1]
    grad_div = jnp.stack([u1.d2[..., 0] + u2.d2[..., 1], u1.d2[..., 1] + u2.d2[..., 2]], axis=-1)
    lap_u = jnp.stack([_lap(u1), _lap(u2)], axis=-1)
    div_D = 0.5 * (lap_u + grad_div)
    D = 0.5 * (grad_u + jnp.swapaxes(grad_u, -1, -2))
    grad_phi = _grad(phi)
    nu = visc(phi.value)
    grad_nu = visc.slope * grad_phi
    viscous = nu[..., None] * div_D + jnp.einsum("...ij,...j->...i", D, grad_nu)

    r_mom = dt_u + advect - viscous + _grad(P) - mu.value[..., None] * grad_phi - g_u
    r_mu = mu.value + _lap(phi) - pot.dpsi(phi.value)
    r_ch = phi.d1[..., 2] + jnp.sum(u * grad_phi, axis=-1) - _lap(mu) - g_phi
    return {"mom": r_mom, "mu": r_mu, "ch": r_ch, "div": div_u}


def residuals_ch(jets: dict[str, Jet2], problem: ProblemConfig, points) -> dict:
    """Interior residuals of Cahn-Hilliard transported by the configured carrier velocity."""
    _require(jets, ("phi", "mu"))
    phi, mu = jets["phi"], jets["mu"]
    c1, c2 = problem.carrier_field(points)
    _, g_phi = problem.forcing(points)
    u = jnp.stack([c1.value, c2.value], axis=-1)
    r_mu = mu.value + _lap(phi) - problem.potential.dpsi(phi.value)
    r_ch = phi.d1[..., 2] + jnp.sum(u * _grad(phi), axis=-1) - _lap(mu) - g_phi
    return {"mu": r_mu, "ch": r_ch}


def boundary_residuals(jets: dict[str, Jet2], problem: ProblemConfig, points, normals) -> dict:
    """Normal-flux mismatches for phi and mu, plus the velocity trace for NSCH.

    Manufactured runs compare against the exact traces; physical runs use the
    homogeneous conditions (u = 0, zero normal fluxes).
    """
    ms = problem.manufactured
    ex = ms.fields(points) if ms is not None else None

    def dn(j: Jet2):
        return jnp.sum(_grad(j) * normals, axis=-1)

    out = {}
    if problem.system == "NSCH" and problem.boundary_u:
        u = jnp.stack([jets["u1"].value, jets["u2"].value], axis=-1)
        if ex is not None:
            u = u - jnp.stack([ex["u1"].value, ex["u2"].value], axis=-1)
        out["bc_u"] = u
    for name in ("phi", "mu"):
        r = dn(jets[name])
        if ex is not None:
            r = r - dn(ex[name])
        out[f"bc_{name}"] = r
    return out


def initial_residuals(jets: dict[str, Jet2], problem: ProblemConfig, points) -> dict:
    """Mismatch with the initial data at t = 0 (exact data are zero in manufactured mode)."""
    if problem.mode == "manufactured":
        phi0 = jnp.zeros(jnp.shape(points)[:-1])
    else:
        phi0 = initial_phi(problem.initial_phi, problem.domain)(jnp.asarray(points)[..., :2])
    out = {}
    if problem.system == "NSCH":
        # u0 = 0 in both modes
        out["ic_u"] = jnp.stack([jets["u1"].value, jets["u2"].value], axis=-1)
    out["ic_phi"] = jets["phi"].value - phi0
    return out


def residual_bundle(jet_fn: Callable, problem: ProblemConfig, arrays: dict) -> ResidualBundle:
    """Residuals on a whole batch; ``jet_fn(points)`` returns a dict of Jet2."""
    interior = residuals_ch if problem.system == "CH" else residuals_nsch
    return ResidualBundle(
        interior=interior(jet_fn(arrays["interior"]), problem, arrays["interior"]),
        boundary=boundary_residuals(jet_fn(arrays["boundary"]), problem, arrays["boundary"],
                                    arrays["normals"]),
        initial=initial_residuals(jet_fn(arrays["initial"]), problem, arrays["initial"]),
    )


def _h2_samples(j: Jet2):
    # mixed derivative counted twice in the Frobenius norm of the Hessian
    return jnp.concatenate([_grad(j), j.d2[..., 0:1], jnp.sqrt(2.0) * j.d2[..., 1:2], j.d2[..., 2:3]],
                           axis=-1)


def make_loss_terms(problem: ProblemConfig, weights: LossWeights, slabs: int = 16) -> Callable:
    """Build ``terms(jet_fn, arrays) -> dict`` of unweighted loss terms (jax-traceable).

    Residual terms are squared norms; regulariser terms are plain norms.
    """
    system = problem.system
    kind = weights.resolved_norm(system)
    area, perim = problem.domain.area, problem.domain.perimeter
    active = {k for k, w in weights.term_weights(system).items() if w != 0.0 or not k.startswith("reg_")}

    def terms(jet_fn, arrays):
        T = arrays["T"]
        bundle = residual_bundle(jet_fn, problem, arrays)
        ti, tb = arrays["interior"][:, 2], arrays["boundary"][:, 2]

        def interior_sq(r):
            if kind == "L4L2":
                return empirical_norm_sq(r, "L4L2", measure=area, times=ti, T=T, slabs=slabs)
            return empirical_norm_sq(r, "L2L2", measure=area * T)

        def boundary_sq(r):
            if kind == "L4L2":
                return empirical_norm_sq(r, "L4L2", measure=perim, times=tb, T=T, slabs=slabs)
            return empirical_norm_sq(r, "L2L2", measure=perim * T)

        out = {k: interior_sq(r) for k, r in bundle.interior.items()}
        out.update({k: boundary_sq(r) for k, r in bundle.boundary.items()})
        out.update({k: empirical_norm_sq(r, "L2L2", measure=area) for k, r in bundle.initial.items()})

        regs = [k for k in REG_TERMS if k in active]
        if regs:
            jets = jet_fn(arrays["interior"])
            vol = area * T
            if system == "CH":
                for name in ("phi", "mu"):
                    if f"reg_{name}" in regs:
                        out[f"reg_{name}"] = jnp.sqrt(empirical_norm_sq(
                            jets[name].value, "L2H1", measure=vol, derivs=_grad(jets[name])))
            else:
                if "reg_u" in regs:
                    grads = jnp.concatenate([_grad(jets["u1"]), _grad(jets["u2"])], axis=-1)
                    out["reg_u"] = jnp.sqrt(empirical_norm_sq(grads, "L2L2", measure=vol))
                if "reg_phi" in regs:
                    out["reg_phi"] = jnp.sqrt(empirical_norm_sq(
                        jets["phi"].value, "L2H1", measure=vol, derivs=_h2_samples(jets["phi"])))
        return out

    return terms


def combine(terms: dict, weights: dict[str, float]):
    total = 0.0
    for k in sorted(terms):
        total = total + weights[k] * terms[k]
    return total


def make_loss_fn(spec: NetworkSpec, problem: ProblemConfig, weights: LossWeights,
                 slabs: int = 16) -> Callable:
    """``loss(theta, arrays) -> (total, terms)`` for a network, jax-traceable in theta."""
    _require(dict.fromkeys(spec.output_names), problem.required_outputs)
    terms_fn = make_loss_terms(problem, weights, slabs)
    w = weights.term_weights(problem.system)

    def loss(theta, arrays):
        terms = terms_fn(lambda pts: forward_jet(spec, theta, pts), arrays)
        return combine(terms, w), terms

    return loss


def _breakdown(total, terms, weights: dict[str, float]) -> LossBreakdown:
    terms = {k: float(v) for k, v in terms.items()}
    bad = [k for k, v in terms.items() if not math.isfinite(v)]
    if bad:
        raise FloatingPointError(f"non-finite loss term(s): {bad}")
    return LossBreakdown(terms, {k: weights[k] for k in terms}, float(total))


def empirical_loss(spec: NetworkSpec, theta, batch: SampleBatch, weights: LossWeights,
                   problem: ProblemConfig, slabs: int = 16) -> tuple[float, LossBreakdown]:
    values = theta.values if hasattr(theta, "values") else theta
    total, terms = make_loss_fn(spec, problem, weights, slabs)(jnp.asarray(values), batch.arrays())
    bd = _breakdown(total, terms, weights.term_weights(problem.system))
    return bd.total, bd


def exact_loss(batch: SampleBatch, weights: LossWeights, problem: ProblemConfig,
               slabs: int = 16) -> tuple[float, LossBreakdown]:
    """Loss of the white-box network whose jets are the exact manufactured fields."""
    ms = problem.manufactured
    if ms is None:
        raise ValueError("exact loss needs a manufactured problem")
    terms = make_loss_terms(problem, weights, slabs)(ms.fields, batch.arrays())
    w = weights.term_weights(problem.system)
    bd = _breakdown(combine(terms, w), terms, w)
    return bd.total, bd


def jit_value_and_grad(loss_fn: Callable) -> Callable:
    """Compiled ``(theta, arrays) -> ((total, terms), grad)``."""
    return jax.jit(jax.value_and_grad(loss_fn, has_aux=True))


def as_numpy_terms(terms) -> dict[str, float]:
    return {k: float(np.asarray(v)) for k, v in terms.items()}
