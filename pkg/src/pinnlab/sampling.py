"""Monte Carlo collocation batches and empirical norm estimators."""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from pinnlab.problems import RectDomain

NORM_KINDS = ("L2L2", "L4L2", "L2H1")


@dataclass(frozen=True)
class SampleBatch:
    interior: np.ndarray   # (N_int, 3) points (x1, x2, t)
    boundary: np.ndarray   # (N_bdy, 3)
    normals: np.ndarray    # (N_bdy, 2) outward unit normals
    initial: np.ndarray    # (N_ic, 2) points at t = 0
    domain: RectDomain
    seed: int

    @property
    def counts(self) -> tuple[int, int, int]:
        return len(self.interior), len(self.boundary), len(self.initial)

    @property
    def initial_points(self) -> np.ndarray:
        """Initial points lifted to (x1, x2, 0)."""
        return np.column_stack([self.initial, np.zeros(len(self.initial))])

    def arrays(self) -> dict[str, jnp.ndarray]:
        return {
            "interior": jnp.asarray(self.interior),
            "boundary": jnp.asarray(self.boundary),
            "normals": jnp.asarray(self.normals),
            "initial": jnp.asarray(self.initial_points),
            "T": jnp.asarray(self.domain.T, dtype=jnp.float64),
        }


def _open_uniform(rng, lo, hi, size):
    u = rng.random(size)
    # rng.random lies in [0, 1); reflect so draws avoid the lower endpoint too
    u = np.where(u == 0.0, 0.5, u)
    return lo + (hi - lo) * u


def sample_batch(domain: RectDomain, counts: tuple[int, int, int], seed) -> SampleBatch:
    """Uniform i.i.d. interior, boundary and initial points.

    Boundary faces are chosen with probability proportional to their length,
    so the draw is uniform over the perimeter.
    """
    n_int, n_bdy, n_ic = (int(c) for c in counts)
    if min(n_int, n_bdy, n_ic) < 1:
        raise ValueError(f"sample counts must be >= 1, got {counts}")
    if not (domain.area > 0 and domain.T > 0):
        raise ValueError("domain has zero measure")
    rng = np.random.default_rng(seed)
    d = domain

    interior = np.column_stack([
        _open_uniform(rng, d.x_min, d.x_max, n_int),
        _open_uniform(rng, d.y_min, d.y_max, n_int),
        _open_uniform(rng, 0.0, d.T, n_int),
    ])

    lx, ly = d.x_max - d.x_min, d.y_max - d.y_min
    # faces: x1 = x_min, x1 = x_max, x2 = y_min, x2 = y_max
    face = rng.choice(4, size=n_bdy, p=np.array([ly, ly, lx, lx]) / d.perimeter)
    s = rng.random(n_bdy)
    tb = _open_uniform(rng, 0.0, d.T, n_bdy)
    x1 = np.select([face == 0, face == 1], [d.x_min, d.x_max], d.x_min + lx * s)
    x2 = np.select([face == 2, face == 3], [d.y_min, d.y_max], d.y_min + ly * s)
    normals = np.zeros((n_bdy, 2))
    normals[face == 0, 0] = -1.0
    normals[face == 1, 0] = 1.0
    normals[face == 2, 1] = -1.0
    normals[face == 3, 1] = 1.0

    initial = np.column_stack([
        _open_uniform(rng, d.x_min, d.x_max, n_ic),
        _open_uniform(rng, d.y_min, d.y_max, n_ic),
    ])
    seed_tag = seed if isinstance(seed, (int, np.integer)) else -1
    return SampleBatch(interior, np.column_stack([x1, x2, tb]), normals, initial, domain, int(seed_tag))


def _is_traced(x) -> bool:
    return isinstance(x, jax.core.Tracer)


def _pointwise_sq(values):
    v = jnp.asarray(values)
    if v.ndim > 1:
        return jnp.sum(v * v, axis=tuple(range(1, v.ndim)))
    return v * v


def empirical_norm_sq(values, kind: str = "L2L2", *, measure: float, times=None,
                      T: float | None = None, slabs: int = 16, derivs=None):
    """Squared empirical norm of sampled field values.

    ``values`` is (N,) or (N, c); vector samples are combined pointwise.
    ``measure`` is the spatial measure (area or perimeter) times the time
    length for ``L2L2``/``L2H1``, and the spatial measure alone for ``L4L2``,
    which partitions ``(0, T)`` into ``slabs`` equal slabs using ``times``.
    ``derivs`` (N, k) supplies derivative samples for ``L2H1``.
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"norm kind must be one of {NORM_KINDS}")
    sq = _pointwise_sq(values)
    if sq.shape[0] == 0:
        raise ValueError("empty sample set")
    if kind == "L2H1":
        if derivs is None:
            raise ValueError("L2H1 needs derivative samples")
        sq = sq + _pointwise_sq(derivs)
    if kind in ("L2L2", "L2H1"):
        return measure * jnp.mean(sq)

    if times is None or T is None:
        raise ValueError("L4L2 needs sample times and T")
    times = jnp.asarray(times)
    dt = T / slabs
    idx = jnp.clip(jnp.floor(times / dt).astype(jnp.int32), 0, slabs - 1)
    onehot = jax.nn.one_hot(idx, slabs, dtype=sq.dtype)
    counts = onehot.sum(axis=0)
    if not _is_traced(counts) and bool(jnp.any(counts == 0)):
        raise ValueError(f"L4L2 estimate has empty time slabs ({slabs} slabs, {len(times)} samples)")
    slab_sq = measure * (onehot.T @ sq) / jnp.maximum(counts, 1.0)
    return jnp.sqrt(dt * jnp.sum(slab_sq * slab_sq))


def empirical_norm(values, kind: str = "L2L2", **kw) -> float:
    """Monte Carlo estimate of the norm (not squared); see :func:`empirical_norm_sq`."""
    return float(jnp.sqrt(empirical_norm_sq(values, kind, **kw)))
