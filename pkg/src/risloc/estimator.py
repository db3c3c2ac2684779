"""Joint UE localization and MC estimation (JLMC) plus an MC-unaware baseline.

Pipeline: coarse 2D-AOD from a far-field dictionary, 1D distance search with
the MC-free near-field model, least-squares MC initialization from the
first-order (Neumann) channel expansion, then alternating quasi-Newton
refinement of AOD, distance and MC vector on the exact coupled model.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .channel import CascadedModel, CouplingError, ff_steering_grid
from .geometry import (Aod2D, LocalSpherical, position_from_spherical, unit_vector,
                       unit_vector_grid, wrap_angles)
from .optim import NonFiniteObjective, quasi_newton_ascent

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


class IllConditionedInit(UserWarning):
    pass


@dataclass(frozen=True)
class EstimatorConfig:
    aod_step_theta_deg: float = 2.0
    aod_step_phi_deg: float = 2.0
    # (min_m, max_m, count); None -> log grid over [0.5 Fresnel, 1.2 Fraunhofer]
    distance_grid: tuple | None = None
    distance_grid_count: int = 200
    convergence_eps: float = 1e-15
    max_outer_iters: int = 50
    # L-BFGS-B iterations per block visit; the outer loop carries convergence,
    # so a few inexact steps per block cost about half of solving each block tightly
    inner_maxiter: int = 3
    inner_gtol: float = 1e-12
    fd_rel_step: float = 1e-6
    max_mc_norm: float = 0.5
    min_rel_improvement: float = 1e-13
    estimate_mc: bool = True

    def __post_init__(self):
        if self.aod_step_theta_deg <= 0 or self.aod_step_phi_deg <= 0:
            raise ValueError("AOD grid steps must be positive")
        if self.convergence_eps <= 0:
            raise ValueError("convergence_eps must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.distance_grid is not None:
            lo, hi, n = self.distance_grid
            if not (0 < lo < hi) or int(n) < 1:
                raise ValueError("distance_grid must be (min > 0, max > min, count >= 1)")


@dataclass
class CoarseAodDictionary:
    """Unit-norm far-field channel signatures on a 2D-AOD grid (columns of ``C``)."""

    theta: np.ndarray
    phi: np.ndarray
    C: np.ndarray

    def __len__(self):
        return self.theta.size

    def aod(self, i: int) -> Aod2D:
        return Aod2D(float(self.theta[i]), float(self.phi[i]))


@dataclass
class JlmcEstimate:
    aod: Aod2D
    distance: float
    mc_coeffs: np.ndarray
    gain: complex
    position: np.ndarray
    objective_trace: list
    iterations: int
    converged: bool
    init: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)


def aod_grid(config: EstimatorConfig):
    """Front-hemisphere grid: theta in (0, 90] deg, phi in (-90, 90] deg."""
    ct, cp = config.aod_step_theta_deg, config.aod_step_phi_deg
    theta = np.arange(1, int(np.floor(90.0 / ct + 1e-9)) + 1) * ct
    phi = 90.0 - np.arange(int(np.floor(180.0 / cp + 1e-9))) * cp
    phi = phi[::-1]
    tt, pp = np.meshgrid(np.deg2rad(theta), np.deg2rad(phi), indexing="ij")
    return tt.ravel(), pp.ravel()


def build_dictionary(model: CascadedModel, config: EstimatorConfig,
                     chunk: int = 512) -> CoarseAodDictionary:
    theta, phi = aod_grid(config)
    units = unit_vector_grid(theta, phi)
    cols = []
    for start in range(0, theta.size, chunk):
        A = ff_steering_grid(units[start:start + chunk], model.geom, model.k)
        cols.append(model.Z0.T @ A)
    C = np.hstack(cols)
    C /= np.linalg.norm(C, axis=0, keepdims=True)
    return CoarseAodDictionary(theta, phi, C)


def distance_grid(model: CascadedModel, config: EstimatorConfig) -> np.ndarray:
    if config.distance_grid is not None:
        lo, hi, n = config.distance_grid
    else:
        lam = model.scenario.radio.wavelength
        lo = 0.5 * model.geom.fresnel_distance(lam)
        hi = 1.2 * model.geom.fraunhofer_distance(lam)
        n = config.distance_grid_count
    return np.geomspace(lo, hi, int(n))


def concentrated_objective(h: np.ndarray, y: np.ndarray) -> float:
    nh = np.vdot(h, h).real
    if nh == 0.0:
        raise EstimationError("channel has zero norm")
    return abs(np.vdot(h, y)) ** 2 / nh


def gain_estimate(h: np.ndarray, y: np.ndarray) -> complex:
    return complex(np.vdot(h, y) / np.vdot(h, h).real)


def objective(aod: Aod2D, distance: float, s, y, model: CascadedModel) -> float:
    """Concentrated likelihood ``|h^H y|^2 / ||h||^2`` on the exact coupled model."""
    return concentrated_objective(model.channel_local(aod, distance, s), y)


def coarse_aod(y, dictionary: CoarseAodDictionary) -> Aod2D:
    if len(dictionary) == 0:
        raise EstimationError("empty AOD dictionary")
    scores = np.abs(dictionary.C.conj().T @ y)
    return dictionary.aod(int(np.argmax(scores)))


def coarse_distance(y, aod_hat: Aod2D, model: CascadedModel, grid) -> float:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EstimationError("empty distance grid")
    u = unit_vector(aod_hat)
    pts = model.geom.center + np.outer(grid, model.geom.orientation @ u)
    diff = pts[:, None, :] - model.elements[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    d0 = np.linalg.norm(pts - model.geom.center, axis=1)
    A = np.exp(-1j * model.k * (dist - d0[:, None]))
    H = A @ model.Z0
    scores = np.abs(H.conj() @ y) ** 2 / np.sum(np.abs(H) ** 2, axis=1)
    return float(grid[int(np.argmax(scores))])


def coarse_mc(y, aod_hat: Aod2D, d_hat: float, model: CascadedModel, rcond=1e-12):
    """Least-squares MC vector from the first-order channel ``beta (h~ + G s)``.

    The gain and ``c = beta s`` enter linearly, so both come from one
    least-squares fit over ``[h~, G]`` and ``s_hat = c / beta_hat``. Fitting the
    gain on ``h~`` alone would soak up the part of ``G s`` parallel to ``h~``
    and leave an error proportional to ``||s||``.

    Returns ``(s_hat, ok)``; ``ok`` is False when the system is rank deficient,
    in which case ``s_hat`` is zero and an :class:`IllConditionedInit` warning
    is emitted.
    """
    p = model.geom.to_global(d_hat * unit_vector(aod_hat))
    X = np.column_stack([model.channel(p), model.mc_sensitivity(p)])
    zero = np.zeros(model.num_coeffs, dtype=complex)
    sv = np.linalg.svd(X, compute_uv=False)
    if X.shape[0] < X.shape[1] or sv[-1] <= rcond * sv[0]:
        warnings.warn("MC sensitivity matrix is rank deficient; MC init set to zero",
                      IllConditionedInit, stacklevel=2)
        return zero, False
    x, *_ = np.linalg.lstsq(X, np.asarray(y, dtype=complex), rcond=None)
    if x[0] == 0:
        return zero, False
    return x[1:] / x[0], True


def _pack_s(s):
    s = np.asarray(s, dtype=complex)
    return np.column_stack([s.real, s.imag]).ravel()


def _unpack_s(v):
    v = np.asarray(v, dtype=float)
    return v[0::2] + 1j * v[1::2]


def _clip_norm(s, max_norm):
    n = np.linalg.norm(s)
    return s * (max_norm / n) if n > max_norm else s


def refine(y, init, model: CascadedModel, config: EstimatorConfig) -> JlmcEstimate:
    """Alternating block ascent over (AOD, distance, MC vector).

    ``init`` is ``(aod, distance, s)``. Each block update is accepted only if it
    increases the objective, so the recorded trace is non-decreasing.
    """
    aod, dist, s = init
    theta, phi = aod.theta, aod.phi
    s = _clip_norm(np.asarray(s, dtype=complex), config.max_mc_norm)
    if not config.estimate_mc:
        s = np.zeros(model.num_coeffs, dtype=complex)
    y = np.asarray(y, dtype=complex)
    ny = np.vdot(y, y).real or 1.0

    def f_full(th, ph, d, sv):
        if d <= 0:
            raise ArithmeticError("non-positive distance")
        p = model.geom.to_global(d * unit_vector_grid(th, ph))
        val = concentrated_objective(model.channel(p, sv), y) / ny
        if not np.isfinite(val):
            raise NonFiniteObjective(f"objective not finite at theta={th}, phi={ph}, d={d}")
        return val

    opts = dict(rel_step=config.fd_rel_step, maxiter=config.inner_maxiter,
                gtol=config.inner_gtol, min_rel_improvement=config.min_rel_improvement)
    try:
        f = f_full(theta, phi, dist, s)
    except CouplingError:
        s = np.zeros_like(s)
        f = f_full(theta, phi, dist, s)
    trace = [f * ny]
    converged = False
    it = 0
    for it in range(1, config.max_outer_iters + 1):
        old = np.concatenate([[theta, phi, dist], _pack_s(s)])

        x, f, _ = quasi_newton_ascent(lambda v: f_full(v[0], v[1], dist, s), [theta, phi], f,
                                      bounds=[(0.0, np.pi), (None, None)], **opts)
        theta, phi = x
        trace.append(f * ny)

        x, f, _ = quasi_newton_ascent(lambda v: f_full(theta, phi, v[0], s), [dist], f,
                                      bounds=[(1e-6, None)], **opts)
        dist = float(x[0])
        trace.append(f * ny)

        if config.estimate_mc:
            lim = config.max_mc_norm
            x, f, _ = quasi_newton_ascent(
                lambda v: f_full(theta, phi, dist, _unpack_s(v))
                if np.linalg.norm(v) <= lim else -np.inf,
                _pack_s(s), f, bounds=[(-lim, lim)] * (2 * s.size), **opts)
            s = _unpack_s(x)
            trace.append(f * ny)

        new = np.concatenate([[theta, phi, dist], _pack_s(s)])
        if np.max(np.abs(new - old)) < config.convergence_eps:
            converged = True
            break

    theta, phi = wrap_angles(theta, phi)
    aod = Aod2D(theta, phi)
    position = position_from_spherical(LocalSpherical(aod, dist), model.geom)
    h = model.channel(position, s)
    return JlmcEstimate(aod=aod, distance=dist, mc_coeffs=s, gain=gain_estimate(h, y),
                        position=position, objective_trace=trace, iterations=it,
                        converged=converged)


def jlmc(y, model: CascadedModel, config: EstimatorConfig,
         dictionary: CoarseAodDictionary | None = None, grid=None) -> JlmcEstimate:
    """Full JLMC pipeline: coarse AOD, distance, MC init, then refinement."""
    if dictionary is None:
        dictionary = build_dictionary(model, config)
    if grid is None:
        grid = distance_grid(model, config)
    y = np.asarray(y, dtype=complex)
    flags = []
    aod0 = coarse_aod(y, dictionary)
    d0 = coarse_distance(y, aod0, model, grid)
    if config.estimate_mc:
        s0, ok = coarse_mc(y, aod0, d0, model)
        if not ok:
            flags.append("ill_conditioned_mc_init")
        if np.linalg.norm(s0) > config.max_mc_norm:
            flags.append("mc_init_clipped")
        s0 = _clip_norm(s0, config.max_mc_norm)
    else:
        s0 = np.zeros(model.num_coeffs, dtype=complex)
    est = refine(y, (aod0, d0, s0), model, config)
    est.init = {"aod": aod0, "distance": d0, "mc_coeffs": s0}
    est.flags = flags + est.flags
    return est


def mc_unaware_estimate(y, model: CascadedModel, config: EstimatorConfig,
                        dictionary: CoarseAodDictionary | None = None,
                        grid=None) -> JlmcEstimate:
    """Baseline that assumes no mutual coupling (``s`` frozen at zero)."""
    from dataclasses import replace
    return jlmc(y, model, replace(config, estimate_mc=False), dictionary, grid)
