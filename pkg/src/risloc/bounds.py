"""CRB with unknown MC and misspecified CRB for an MC-unaware receiver.

Parameter orderings:

* aware vector ``zeta = [Re beta, Im beta, p_x, p_y, p_z, Re s_0, Im s_0, ...]``
* assumed-model vector ``gamma = [Re beta, Im beta, p_x, p_y, p_z]``

PEBs are reported in meters as ``sqrt(trace)`` of the position block; the raw
traces are kept alongside.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .channel import (CascadedModel, McModel, Scenario, channel_gain, nf_steering_jacobian,
                      solve_coupled)
from .geometry import as_position
from .optim import nelder_mead_max

log = logging.getLogger(__name__)

COND_FLAG = 1e12
POS = slice(2, 5)


class UnidentifiableError(np.linalg.LinAlgError):
    pass


@dataclass
class AwareFim:
    J: np.ndarray
    peb: float
    trace: float
    peb_known: float
    trace_known: float
    cond: float
    flags: list = field(default_factory=list)


@dataclass(frozen=True)
class PseudoTrueSearch:
    cube_side: float = 1.0
    grid_step: float = 0.1
    xatol: float = 1e-9
    maxiter: int = 20000


@dataclass
class PseudoTrue:
    gamma0: np.ndarray
    gamma_true: np.ndarray
    mismatch: float
    mismatch_true: float
    search: PseudoTrueSearch
    flags: list = field(default_factory=list)

    @property
    def position(self) -> np.ndarray:
        return self.gamma0[POS]

    @property
    def bias_norm(self) -> float:
        return float(np.linalg.norm(self.gamma_true[POS] - self.gamma0[POS]))


@dataclass
class BoundReport:
    p_dbm: float
    s_norm: float
    A_matrix: np.ndarray
    B_matrix: np.ndarray
    mcrb: np.ndarray
    bias: np.ndarray
    lb: np.ndarray
    peb_unaware: float
    peb_aware: float
    peb_known: float
    bias_norm: float
    lb_trace: float
    aware_trace: float
    gamma0: np.ndarray
    flags: list = field(default_factory=list)


def true_gain(scenario: Scenario, phase_offset: float = 0.0) -> complex:
    return channel_gain(scenario.radio, scenario.ue_position, scenario.geom.center,
                        scenario.bs_position, phase_offset).beta


def _scaled_inverse(M, assume_a="sym"):
    """Inverse of a symmetric matrix after diagonal equilibration.

    Returns ``(inverse, condition number of the equilibrated matrix)``.
    """
    d = np.sqrt(np.abs(np.diag(M)))
    d[d == 0] = 1.0
    Ms = M / np.outer(d, d)
    Ms = 0.5 * (Ms + Ms.T)
    cond = np.linalg.cond(Ms)
    if not np.isfinite(cond):
        raise UnidentifiableError("matrix is singular")
    inv = sla.solve(Ms, np.eye(M.shape[0]), assume_a=assume_a)
    inv = inv / np.outer(d, d)
    return 0.5 * (inv + inv.T), float(cond)


def mean_jacobian(model: CascadedModel, p_u, s, beta) -> np.ndarray:
    """Analytic ``d(beta h)/d zeta`` as an ``N_t x (5 + 2 N_m)`` complex matrix.

    Position derivatives follow from the steering-vector phase gradient; MC
    derivatives use ``d Omega'/d s_i = Omega' A_i Omega'``.
    """
    s = np.asarray(s, dtype=complex)
    Z = model.profile_matrix(s)
    a_u, da_u = nf_steering_jacobian(p_u, model.geom, model.k, model.elements)
    h = Z.T @ a_u
    cols = [h, 1j * h, beta * (Z.T @ da_u)]
    if np.any(s):
        X_u = solve_coupled(model.scattering(s), model.W, a_u)
        V = model.W * X_u
    else:
        V = model.W * a_u[:, None]
    for A in model.supports:
        g = beta * np.sum(V * (A @ Z), axis=0)
        cols += [g, 1j * g]
    J = np.column_stack([np.atleast_2d(c).reshape(h.size, -1) for c in cols])
    return J


def fim_from_jacobian(J: np.ndarray, noise_var: float) -> np.ndarray:
    F = (2.0 / noise_var) * np.real(J.conj().T @ J)
    return 0.5 * (F + F.T)


def fim_aware(scenario: Scenario, mc: McModel, phase_offset: float = 0.0,
              model: CascadedModel | None = None) -> AwareFim:
    """FIM over ``zeta`` (MC known to exist, values unknown) and the derived PEBs."""
    if model is None:
        model = CascadedModel(scenario, mc.supports)
    beta = true_gain(scenario, phase_offset)
    J = mean_jacobian(model, scenario.ue_position, mc.coeffs, beta)
    F = fim_from_jacobian(J, scenario.radio.noise_var)
    flags = []
    try:
        Finv, cond = _scaled_inverse(F, assume_a="pos")
        Finv5, _ = _scaled_inverse(F[:5, :5], assume_a="pos")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise UnidentifiableError(f"aware FIM is singular: {exc}") from exc
    if cond > COND_FLAG:
        flags.append("ill_conditioned_fim")
    tr = float(np.trace(Finv[POS, POS]))
    tr5 = float(np.trace(Finv5[POS, POS]))
    return AwareFim(J=F, peb=float(np.sqrt(tr)), trace=tr, peb_known=float(np.sqrt(tr5)),
                    trace_known=tr5, cond=cond, flags=flags)


def _unaware_fit(model: CascadedModel, h_true: np.ndarray):
    ny = np.vdot(h_true, h_true).real

    def score(p):
        h0 = model.channel(p)
        return abs(np.vdot(h0, h_true)) ** 2 / (np.vdot(h0, h0).real * ny)

    return score


def pseudo_true(scenario: Scenario, mc: McModel, search: PseudoTrueSearch = PseudoTrueSearch(),
                phase_offset: float = 0.0, model: CascadedModel | None = None) -> PseudoTrue:
    """Best MC-free fit to the noiseless coupled observation.

    Cube grid search around the true position, then Nelder-Mead polish. The
    search works on ``h_true`` rather than ``beta * h_true``; the position part
    of the result is therefore independent of transmit power.
    """
    if model is None:
        model = CascadedModel(scenario, mc.supports)
    p_true = scenario.ue_position
    beta = true_gain(scenario, phase_offset)
    h_true = model.channel(p_true, mc.coeffs)
    score = _unaware_fit(model, h_true)

    n_half = int(round(0.5 * search.cube_side / search.grid_step))
    offs = np.arange(-n_half, n_half + 1) * search.grid_step
    best_p, best_v = p_true.copy(), score(p_true)
    for dx in offs:
        for dy in offs:
            for dz in offs:
                p = p_true + np.array([dx, dy, dz])
                try:
                    v = score(p)
                except ArithmeticError:
                    continue
                if v > best_v:
                    best_p, best_v = p, v

    flags = []
    try:
        p0, v0, ok = nelder_mead_max(score, best_p, 0.5 * search.grid_step, xatol=search.xatol,
                                     maxiter=search.maxiter)
        if not ok:
            flags.append("nelder_mead_not_converged")
    except ArithmeticError:
        p0, flags = best_p, ["nelder_mead_failed"]
    if np.max(np.abs(p0 - p_true)) > 0.5 * search.cube_side:
        flags.append("outside_search_cube")

    y_c = beta * h_true
    h0 = model.channel(p0)
    beta0 = complex(np.vdot(h0, y_c) / np.vdot(h0, h0).real)
    h_bar0 = model.channel(p_true)
    mismatch = float(np.linalg.norm(y_c - beta0 * h0))
    mismatch_true = float(np.linalg.norm(y_c - beta * h_bar0))
    gamma0 = np.array([beta0.real, beta0.imag, *p0])
    gamma_true = np.array([beta.real, beta.imag, *p_true])
    log.debug("pseudo-true position %s", p0)
    return PseudoTrue(gamma0=gamma0, gamma_true=gamma_true, mismatch=mismatch,
                      mismatch_true=mismatch_true, search=search, flags=flags)


def unaware_derivatives(model: CascadedModel, gamma):
    """Assumed-model mean ``y_m = beta h~(p)`` with analytic first and second derivatives.

    Returns ``(y_m, D1, D2)`` with ``D1`` of shape ``(N_t, 5)`` and ``D2`` of
    shape ``(N_t, 5, 5)``.
    """
    gamma = np.asarray(gamma, dtype=float)
    beta = gamma[0] + 1j * gamma[1]
    p = as_position(gamma[POS])
    Z0 = model.Z0
    diff = p - model.elements
    dist = np.linalg.norm(diff, axis=1)
    r0 = p - model.geom.center
    d0 = np.linalg.norm(r0)
    u = diff / dist[:, None]
    u0 = r0 / d0
    k = model.k
    a = np.exp(-1j * k * (dist - d0))
    grad = u - u0
    eye = np.eye(3)
    hess = ((eye[None] - u[:, :, None] * u[:, None, :]) / dist[:, None, None]
            - (eye - np.outer(u0, u0)) / d0)
    da = (-1j * k) * a[:, None] * grad
    d2a = a[:, None, None] * ((-1j * k) * hess - k ** 2 * grad[:, :, None] * grad[:, None, :])

    h = Z0.T @ a
    dh = Z0.T @ da
    d2h = np.einsum("mt,mij->tij", Z0, d2a)
    nt = h.size
    D1 = np.empty((nt, 5), dtype=complex)
    D1[:, 0] = h
    D1[:, 1] = 1j * h
    D1[:, POS] = beta * dh
    D2 = np.zeros((nt, 5, 5), dtype=complex)
    D2[:, 0, POS] = dh
    D2[:, 1, POS] = 1j * dh
    D2[:, POS, 0] = dh
    D2[:, POS, 1] = 1j * dh
    D2[:, POS, POS] = beta * d2h
    return beta * h, D1, D2


def mcrb_lb(scenario: Scenario, mc: McModel, pt: PseudoTrue, aware: AwareFim | None = None,
            model: CascadedModel | None = None, phase_offset: float = 0.0) -> BoundReport:
    """Assemble ``A``, ``B``, ``MCRB = A^-1 B A^-1``, the bias term and ``LB``."""
    if model is None:
        model = CascadedModel(scenario, mc.supports)
    if aware is None:
        aware = fim_aware(scenario, mc, phase_offset, model)
    var = scenario.radio.noise_var
    beta = true_gain(scenario, phase_offset)
    # pseudo-true position is power independent; rescale the gain part
    scale = beta / (pt.gamma_true[0] + 1j * pt.gamma_true[1])
    g0 = pt.gamma0.copy()
    b0 = (g0[0] + 1j * g0[1]) * scale
    g0[:2] = b0.real, b0.imag
    g_true = np.array([beta.real, beta.imag, *scenario.ue_position])

    y_c = beta * model.channel(scenario.ue_position, mc.coeffs)
    y_m, D1, D2 = unaware_derivatives(model, g0)
    res = y_c - y_m
    gram = np.real(D1.conj().T @ D1)
    A = (2.0 / var) * (np.real(np.einsum("tij,t->ij", D2.conj(), res)) - gram)
    A = 0.5 * (A + A.T)
    mu = np.real(D1.conj().T @ res)
    B = (4.0 / var ** 2) * np.outer(mu, mu) + (2.0 / var) * gram
    B = 0.5 * (B + B.T)

    flags = list(pt.flags) + list(aware.flags)
    try:
        Ainv, cond = _scaled_inverse(A)
        if cond > COND_FLAG:
            flags.append("ill_conditioned_A")
    except (np.linalg.LinAlgError, ValueError):
        flags.append("singular_A_pinv")
        Ainv = np.linalg.pinv(A)
    mcrb = Ainv @ B @ Ainv
    mcrb = 0.5 * (mcrb + mcrb.T)
    e = g_true - g0
    bias = np.outer(e, e)
    lb = mcrb + bias
    lb_trace = float(np.trace(lb[POS, POS]))
    return BoundReport(p_dbm=scenario.radio.tx_power_dbm, s_norm=float(np.linalg.norm(mc.coeffs)),
                       A_matrix=A, B_matrix=B, mcrb=mcrb, bias=bias, lb=lb,
                       peb_unaware=float(np.sqrt(max(lb_trace, 0.0))), peb_aware=aware.peb,
                       peb_known=aware.peb_known, bias_norm=float(np.linalg.norm(e[POS])),
                       lb_trace=lb_trace, aware_trace=aware.trace, gamma0=g0, flags=flags)


def bound_sweep(scenario: Scenario, supports, s_dir, powers, s_norms,
                search: PseudoTrueSearch = PseudoTrueSearch()) -> list:
    """One :class:`BoundReport` per ``(power, ||s||)``; pseudo-true reused across powers."""
    powers, s_norms = list(powers), list(s_norms)
    if not powers or not s_norms:
        raise ValueError("bound sweep needs at least one power and one MC norm")
    out = []
    for q in s_norms:
        mc = McModel(supports, q * np.asarray(s_dir, dtype=complex))
        model = CascadedModel(scenario, supports)
        pt = pseudo_true(scenario, mc, search, model=model)
        for p_dbm in powers:
            sc = scenario.with_power(p_dbm)
            out.append(mcrb_lb(sc, mc, pt, model=model))
    return out
