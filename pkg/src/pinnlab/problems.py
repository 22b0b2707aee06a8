"""PDE systems, constitutive laws and the manufactured test problem.

All field evaluators take points of shape (N, 3) holding ``(x1, x2, t)`` and
are written with ``jax.numpy`` so they can sit inside a jitted loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import jax.numpy as jnp
import numpy as np

from pinnlab.netjet import Jet2


@dataclass(frozen=True)
class RectDomain:
    x_min: float = 0.0
    x_max: float = 1.0
    y_min: float = 0.0
    y_max: float = 1.0
    T: float = 2.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError("RectDomain needs x_min < x_max and y_min < y_max")
        if not self.T > 0:
            raise ValueError("RectDomain needs T > 0")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def perimeter(self) -> float:
        return 2.0 * ((self.x_max - self.x_min) + (self.y_max - self.y_min))

    def with_T(self, T: float) -> "RectDomain":
        return RectDomain(self.x_min, self.x_max, self.y_min, self.y_max, T)


@dataclass(frozen=True)
class Potential:
    kind: str = "landau"

    def __post_init__(self):
        if self.kind != "landau":
            raise ValueError(f"unsupported potential {self.kind!r}")

    def psi(self, s):
        return 0.25 * (s * s - 1.0) ** 2

    def dpsi(self, s):
        return s ** 3 - s

    def d2psi(self, s):
        return 3.0 * s * s - 1.0


def psi_eval(potential: Potential, s):
    """(Psi, Psi', Psi'') at s."""
    return potential.psi(s), potential.dpsi(s), potential.d2psi(s)


@dataclass(frozen=True)
class ViscosityModel:
    nu1: float = 1.0
    nu2: float = 1.0

    def __post_init__(self):
        if not (self.nu1 > 0 and self.nu2 > 0):
            raise ValueError("viscosities must be positive")

    def __call__(self, z):
        return self.nu1 * (1.0 + z) / 2.0 + self.nu2 * (1.0 - z) / 2.0

    @property
    def slope(self) -> float:
        """d nu / dz (the model is affine in z)."""
        return (self.nu1 - self.nu2) / 2.0


def viscosity_eval(model: ViscosityModel, z):
    return model(z)


def _split(points):
    pts = jnp.asarray(points, dtype=jnp.float64)
    return pts[..., 0], pts[..., 1], pts[..., 2]


class ManufacturedSolution:
    """u = (-x2 t, x1 t), phi = sin(x1 t) + sin(x2 t), P = 0, mu = -lap(phi) + Psi'(phi).

    The forcings below are closed forms derived by hand for the Landau
    potential and constant unit mobility; the viscous term drops out because
    the symmetric gradient of u vanishes identically.
    """

    def __init__(self, potential: Potential | None = None):
        self.potential = potential or Potential()

    def fields(self, points) -> dict[str, Jet2]:
        x1, x2, t = _split(points)
        z = jnp.zeros_like(t)
        s1, s2 = jnp.sin(x1 * t), jnp.sin(x2 * t)
        c1, c2 = jnp.cos(x1 * t), jnp.cos(x2 * t)

        phi = s1 + s2
        phi_d1 = jnp.stack([t * c1, t * c2, x1 * c1 + x2 * c2], axis=-1)
        phi_d2 = jnp.stack([-t * t * s1, z, -t * t * s2], axis=-1)

        # mu = (t^2 - 1) phi + phi^3, since lap(phi) = -t^2 phi
        k = t * t - 1.0 + 3.0 * phi * phi
        mu = (t * t - 1.0) * phi + phi ** 3
        mu_d1 = jnp.stack([k * phi_d1[..., 0], k * phi_d1[..., 1],
                           2.0 * t * phi + k * phi_d1[..., 2]], axis=-1)
        mu_d2 = jnp.stack([6.0 * phi * phi_d1[..., i] * phi_d1[..., j] + k * phi_d2[..., c]
                           for c, (i, j) in enumerate(((0, 0), (0, 1), (1, 1)))], axis=-1)

        zero3 = jnp.stack([z, z, z], axis=-1)
        return {
            "u1": Jet2(-x2 * t, jnp.stack([z, -t, -x2], axis=-1), zero3),
            "u2": Jet2(x1 * t, jnp.stack([t, z, x1], axis=-1), zero3),
            "phi": Jet2(phi, phi_d1, phi_d2),
            "mu": Jet2(mu, mu_d1, mu_d2),
            "P": Jet2(z, zero3, zero3),
        }

    def forcing(self, points):
        """(g_u of shape (..., 2), g_phi of shape (...,))."""
        x1, x2, t = _split(points)
        s1, s2 = jnp.sin(x1 * t), jnp.sin(x2 * t)
        c1, c2 = jnp.cos(x1 * t), jnp.cos(x2 * t)
        phi = s1 + s2
        mu = (t * t - 1.0) * phi + phi ** 3
        t2 = t * t

        g_u1 = -x2 - x1 * t2 - mu * t * c1
        g_u2 = x1 - x2 * t2 - mu * t * c2

        dphi_dt = x1 * c1 + x2 * c2
        advect = t2 * (x1 * c2 - x2 * c1)
        grad_sq = t2 * (c1 * c1 + c2 * c2)
        lap_mu = -(t2 - 1.0 + 3.0 * phi * phi) * t2 * phi + 6.0 * phi * grad_sq
        g_phi = dphi_dt + advect - lap_mu
        return jnp.stack([g_u1, g_u2], axis=-1), g_phi


def exact_eval(ms: ManufacturedSolution, points) -> dict[str, Jet2]:
    return ms.fields(points)


def forcing_eval(ms: ManufacturedSolution, points):
    return ms.forcing(points)


def rotational_carrier(points) -> tuple[Jet2, Jet2]:
    """The manufactured velocity, used as the given carrier field in CH mode."""
    f = ManufacturedSolution().fields(points)
    return f["u1"], f["u2"]


def zero_carrier(points) -> tuple[Jet2, Jet2]:
    x1, _, _ = _split(points)
    z = jnp.zeros_like(x1)
    z3 = jnp.stack([z, z, z], axis=-1)
    return Jet2(z, z3, z3), Jet2(z, z3, z3)


CARRIERS = {"rotational": rotational_carrier, "zero": zero_carrier}


def initial_phi(kind: str, domain: RectDomain):
    """Initial order parameter for physical-mode runs, as a function of (N, 2) points."""
    lx, ly = domain.x_max - domain.x_min, domain.y_max - domain.y_min

    def cosine(xy):
        xy = jnp.asarray(xy)
        a = jnp.pi * (xy[..., 0] - domain.x_min) / lx
        b = jnp.pi * (xy[..., 1] - domain.y_min) / ly
        return 0.5 * jnp.cos(a) * jnp.cos(b)

    def zero(xy):
        return jnp.zeros(jnp.shape(xy)[:-1])

    table = {"cosine": cosine, "zero": zero}
    if kind not in table:
        raise ValueError(f"unknown initial phi {kind!r}")
    return table[kind]


@dataclass(frozen=True)
class ProblemConfig:
    system: str = "NSCH"
    mode: str = "manufactured"
    domain: RectDomain = field(default_factory=RectDomain)
    potential: Potential = field(default_factory=Potential)
    viscosity: ViscosityModel = field(default_factory=ViscosityModel)
    carrier: str = "rotational"
    initial_phi: str = "cosine"
    # manufactured mode: penalise u against its exact boundary trace
    boundary_u: bool = True

    def __post_init__(self):
        if self.system not in ("CH", "NSCH"):
            raise ValueError(f"system must be CH or NSCH, got {self.system!r}")
        if self.mode not in ("manufactured", "physical"):
            raise ValueError(f"mode must be manufactured or physical, got {self.mode!r}")
        if self.carrier not in CARRIERS:
            raise ValueError(f"unknown carrier {self.carrier!r}")
        if self.system == "CH" and self.mode == "manufactured" and self.carrier != "rotational":
            raise ValueError("manufactured CH needs the rotational carrier")

    @property
    def manufactured(self) -> ManufacturedSolution | None:
        if self.mode != "manufactured":
            return None
        return ManufacturedSolution(self.potential)

    @property
    def required_outputs(self) -> tuple[str, ...]:
        if self.system == "CH":
            return ("phi", "mu")
        return ("u1", "u2", "phi", "mu", "P")

    def carrier_field(self, points):
        return CARRIERS[self.carrier](points)

    def forcing(self, points):
        ms = self.manufactured
        if ms is None:
            n = np.shape(points)[:-1]
            return jnp.zeros(n + (2,)), jnp.zeros(n)
        return ms.forcing(points)
