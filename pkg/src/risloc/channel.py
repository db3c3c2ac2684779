"""Near-field RIS cascaded channel with inter-element mutual coupling.

The MC-affected profile of transmission ``t`` is ``(Omega_t^{-1} - S)^{-1}``.
It is never formed densely: ``(Omega^{-1} - S)^{-1} v = Omega x`` where
``(I - S Omega) x = v``, a sparse system solved per transmission.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import Aod2D, GeometryError, RisGeometry, as_position, element_positions, unit_vector

SPEED_OF_LIGHT = 3e8
SOLVE_RTOL = 1e-10
# below this infinity-norm of S the fixed-point iteration contracts fast
_ITERATIVE_NORM = 0.5


class CouplingError(ArithmeticError):
    """The coupled system ``I - S Omega_t`` is (near-)singular."""


def dbm_to_watt(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


@dataclass(frozen=True)
class RadioConfig:
    """Carrier, power and noise parameters. Pilots are all ones.

    ``noise_var`` is the per-sample complex noise variance. By default the
    noise PSD value is used as that variance directly; set
    ``noise_includes_bandwidth`` to multiply it by ``bandwidth_hz``.
    """

    carrier_hz: float = 30e9
    tx_power_dbm: float = 0.0
    tx_gain: float = 1.0
    rx_gain: float = 1.0
    noise_psd_dbm_per_hz: float = -173.855
    bandwidth_hz: float = 1e6
    num_pilots: int = 15
    noise_includes_bandwidth: bool = False

    def __post_init__(self):
        for name in ("carrier_hz", "tx_gain", "rx_gain", "bandwidth_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.num_pilots < 1:
            raise ValueError("num_pilots must be >= 1")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def wavenumber(self) -> float:
        return 2.0 * np.pi / self.wavelength

    @property
    def tx_power_w(self) -> float:
        return float(dbm_to_watt(self.tx_power_dbm))

    @property
    def noise_var(self) -> float:
        var = float(dbm_to_watt(self.noise_psd_dbm_per_hz))
        if self.noise_includes_bandwidth:
            var *= self.bandwidth_hz
        return var

    def with_power(self, tx_power_dbm: float) -> "RadioConfig":
        from dataclasses import replace
        return replace(self, tx_power_dbm=float(tx_power_dbm))


@dataclass(frozen=True)
class RisProfileSet:
    """Commanded RIS phases, one column per transmission (``M_r x N_t``)."""

    phases: np.ndarray

    def __post_init__(self):
        ph = np.asarray(self.phases, dtype=float)
        if ph.ndim != 2:
            raise ValueError("phases must be a 2-D array (M_r x N_t)")
        object.__setattr__(self, "phases", ph)

    @property
    def W(self) -> np.ndarray:
        return np.exp(1j * self.phases)

    @property
    def num_transmissions(self) -> int:
        return self.phases.shape[1]

    @classmethod
    def random(cls, num_elements: int, num_pilots: int, rng) -> "RisProfileSet":
        return cls(rng.uniform(-np.pi, np.pi, size=(num_elements, num_pilots)))


@dataclass(frozen=True)
class McModel:
    """Scattering matrix ``S = sum_i coeffs[i] * supports[i]``."""

    supports: tuple
    coeffs: np.ndarray

    def __post_init__(self):
        coeffs = np.atleast_1d(np.asarray(self.coeffs, dtype=complex))
        if coeffs.ndim != 1 or coeffs.size != len(self.supports):
            raise ValueError(f"expected {len(self.supports)} MC coefficients, got {coeffs.size}")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "supports", tuple(self.supports))

    @property
    def num_coeffs(self) -> int:
        return len(self.supports)

    def with_coeffs(self, coeffs) -> "McModel":
        return McModel(self.supports, coeffs)


@dataclass(frozen=True)
class ChannelGain:
    beta: complex
    phase_offset: float


@dataclass(frozen=True)
class Scenario:
    """Everything known to the receiver except the UE position and MC vector."""

    geom: RisGeometry
    bs_position: np.ndarray
    ue_position: np.ndarray
    radio: RadioConfig
    profiles: RisProfileSet

    def __post_init__(self):
        object.__setattr__(self, "bs_position", as_position(self.bs_position))
        object.__setattr__(self, "ue_position", as_position(self.ue_position))
        if self.profiles.phases.shape != (self.geom.num_elements, self.radio.num_pilots):
            raise ValueError("profile matrix must be M_r x N_t")

    def with_power(self, tx_power_dbm: float) -> "Scenario":
        return Scenario(self.geom, self.bs_position, self.ue_position,
                        self.radio.with_power(tx_power_dbm), self.profiles)

    def translated(self, offset) -> "Scenario":
        offset = as_position(offset)
        return Scenario(self.geom.translated(offset), self.bs_position + offset,
                        self.ue_position + offset, self.radio, self.profiles)


@dataclass
class Observation:
    y: np.ndarray
    noise_var: float
    ue_position: np.ndarray
    mc_coeffs: np.ndarray
    beta: complex
    seed: int | None = None
    meta: dict = field(default_factory=dict)


def nf_steering(p, geom: RisGeometry, k: float, elements=None) -> np.ndarray:
    """Near-field steering vector, phase referenced to the RIS centre."""
    p = as_position(p)
    if elements is None:
        elements = element_positions(geom)
    dist = np.linalg.norm(p - elements, axis=1)
    d0 = np.linalg.norm(p - geom.center)
    if d0 == 0.0 or np.any(dist == 0.0):
        raise GeometryError("point coincides with the RIS centre or an element")
    return np.exp(-1j * k * (dist - d0))


def nf_steering_jacobian(p, geom: RisGeometry, k: float, elements=None):
    """Steering vector and its derivative w.r.t. ``p``, shapes ``(M,)`` and ``(M, 3)``."""
    p = as_position(p)
    if elements is None:
        elements = element_positions(geom)
    diff = p - elements
    dist = np.linalg.norm(diff, axis=1)
    r0 = p - geom.center
    d0 = np.linalg.norm(r0)
    if d0 == 0.0 or np.any(dist == 0.0):
        raise GeometryError("point coincides with the RIS centre or an element")
    a = np.exp(-1j * k * (dist - d0))
    grad_phase = diff / dist[:, None] - r0 / d0
    return a, (-1j * k) * a[:, None] * grad_phase


def ff_steering(aod: Aod2D, geom: RisGeometry, k: float) -> np.ndarray:
    """Far-field (planar wavefront) steering vector in the RIS local frame."""
    return np.exp(1j * k * (geom.local_element_positions() @ unit_vector(aod)))


def ff_steering_grid(units: np.ndarray, geom: RisGeometry, k: float) -> np.ndarray:
    """Far-field steering vectors for many local unit vectors, ``(M_r, n)``."""
    return np.exp(1j * k * (geom.local_element_positions() @ np.atleast_2d(units).T))


def build_supports(geom: RisGeometry, n_m: int) -> tuple:
    """Support matrices by neighbour tier: self, axis neighbours, diagonal neighbours."""
    if n_m not in (1, 2, 3):
        raise ValueError(f"unsupported number of MC tiers: {n_m} (1..3 supported)")
    m1, m2 = geom.m1, geom.m2
    n = m1 * m2
    idx = np.arange(n).reshape(m1, m2)
    supports = [sp.identity(n, dtype=bool, format="csr")]

    def adjacency(pairs):
        if not pairs:
            return sp.csr_matrix((n, n), dtype=bool)
        r = np.concatenate([a for a, _ in pairs])
        c = np.concatenate([b for _, b in pairs])
        rows = np.concatenate([r, c])
        cols = np.concatenate([c, r])
        return sp.csr_matrix((np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n))

    if n_m >= 2:
        supports.append(adjacency([
            (idx[:, :-1].ravel(), idx[:, 1:].ravel()),
            (idx[:-1, :].ravel(), idx[1:, :].ravel()),
        ]))
    if n_m >= 3:
        supports.append(adjacency([
            (idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()),
            (idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()),
        ]))
    return tuple(supports)


class SupportPattern:
    """Union sparsity pattern of disjoint supports with a tier label per nonzero.

    Lets ``S`` be assembled for a new coefficient vector without sparse adds.
    """

    def __init__(self, supports):
        n = supports[0].shape[0]
        labelled = sp.csr_matrix((n, n), dtype=float)
        for i, A in enumerate(supports):
            labelled = labelled + (i + 1) * sp.csr_matrix(A, dtype=float)
        labelled = labelled.tocsr()
        labelled.sort_indices()
        tier = np.rint(labelled.data).astype(int) - 1
        counts = sum(sp.csr_matrix(A).nnz for A in supports)
        if labelled.nnz != counts or np.any(tier < 0) or np.any(tier >= len(supports)):
            raise ValueError("support matrices overlap")
        self.shape = (n, n)
        self.indices = labelled.indices
        self.indptr = labelled.indptr
        self.tier = tier

    def assemble(self, coeffs) -> sp.csr_matrix:
        data = np.asarray(coeffs, dtype=complex)[self.tier]
        return sp.csr_matrix((data, self.indices, self.indptr), shape=self.shape)


def scattering_matrix(mc: McModel) -> sp.csr_matrix:
    return SupportPattern(mc.supports).assemble(mc.coeffs)


def solve_coupled(S: sp.spmatrix, W: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(I - S diag(W[:, t])) X[:, t] = rhs[:, t]`` for every column ``t``.

    ``rhs`` may be a single vector shared by all columns. Uses a batched
    fixed-point iteration when ``||S||_inf`` is small (guaranteed contraction
    since ``|W| = 1``) and sparse LU otherwise. Raises :class:`CouplingError`
    when the residual check fails.
    """
    W = np.asarray(W, dtype=complex)
    rhs = np.asarray(rhs, dtype=complex)
    if rhs.ndim == 1:
        rhs = np.broadcast_to(rhs[:, None], W.shape)
    if S.nnz == 0:
        return np.array(rhs, dtype=complex)
    S = sp.csr_matrix(S)
    s_norm = np.add.reduceat(np.abs(S.data), S.indptr[:-1][np.diff(S.indptr) > 0]).max()
    scale = np.linalg.norm(rhs, axis=0)
    X = None
    if s_norm <= _ITERATIVE_NORM:
        X = np.array(rhs, dtype=complex)
        for _ in range(200):
            X_new = rhs + S @ (W * X)
            step = np.linalg.norm(X_new - X, axis=0)
            X = X_new
            if np.all(step <= 1e-15 * scale):
                break
    else:
        X = np.empty(W.shape, dtype=complex)
        I = sp.identity(S.shape[0], dtype=complex, format="csc")
        for t in range(W.shape[1]):
            M = (I - S @ sp.diags(W[:, t])).tocsc()
            try:
                with np.errstate(all="raise"):
                    X[:, t] = spla.splu(M).solve(np.ascontiguousarray(rhs[:, t]))
            except (RuntimeError, FloatingPointError) as exc:
                raise CouplingError(f"coupled system singular for transmission {t}") from exc
    resid = np.linalg.norm(X - S @ (W * X) - rhs, axis=0)
    if not np.all(np.isfinite(resid)) or np.any(resid > SOLVE_RTOL * scale):
        raise CouplingError(f"coupled solve residual too large: {resid.max():.3e}")
    return X


def mc_profile_apply(phases_t, S, a_b, a_u=None):
    """One transmission: return ``z`` with ``(I - S Omega_t) z = a_b`` and ``[h]_t``.

    ``[h]_t = a_u^T Omega_t z`` equals ``a_u^T (Omega_t^{-1} - S)^{-1} a_b``.
    """
    omega = np.exp(1j * np.asarray(phases_t, dtype=float))
    z = solve_coupled(S, omega[:, None], np.asarray(a_b, dtype=complex))[:, 0]
    if a_u is None:
        return z, None
    return z, complex(np.asarray(a_u) @ (omega * z))


class CascadedModel:
    """Scenario-bound evaluator of the cascaded channel ``h(p_u, s)``.

    Caches the BS steering vector and the MC-affected profile matrix
    ``Z[:, t] = Omega'_t a(p_b)`` for the most recent MC vector, so channel
    evaluations at a new UE position cost a single matrix-vector product.
    """

    def __init__(self, scenario: Scenario, supports):
        self.scenario = scenario
        self.geom = scenario.geom
        self.k = scenario.radio.wavenumber
        self.supports = tuple(supports)
        self.pattern = SupportPattern(self.supports)
        self.elements = element_positions(self.geom)
        self.W = scenario.profiles.W
        self.a_b = nf_steering(scenario.bs_position, self.geom, self.k, self.elements)
        self.Z0 = self.W * self.a_b[:, None]
        self._z_key = None
        self._Z = None

    @property
    def num_coeffs(self) -> int:
        return len(self.supports)

    def scattering(self, s) -> sp.csr_matrix:
        return self.pattern.assemble(s)

    def profile_matrix(self, s=None) -> np.ndarray:
        """``Z`` with columns ``Omega'_t a(p_b)``; ``h = Z^T a(p_u)``."""
        if s is None:
            return self.Z0
        s = np.asarray(s, dtype=complex)
        if not np.any(s):
            return self.Z0
        key = s.tobytes()
        if key != self._z_key:
            X = solve_coupled(self.scattering(s), self.W, self.a_b)
            self._Z = self.W * X
            self._z_key = key
        return self._Z

    def steering(self, p) -> np.ndarray:
        return nf_steering(p, self.geom, self.k, self.elements)

    def channel(self, p_u, s=None) -> np.ndarray:
        return self.profile_matrix(s).T @ self.steering(p_u)

    def channel_local(self, aod: Aod2D, distance: float, s=None) -> np.ndarray:
        p = self.geom.to_global(distance * unit_vector(aod))
        return self.channel(p, s)

    def mc_sensitivity(self, p_u) -> np.ndarray:
        """First-order MC matrix ``G[t, i] = a_u^T Omega_t A_i Omega_t a_b``."""
        a_u = self.steering(p_u)
        left = self.W * a_u[:, None]
        return np.column_stack([np.sum(left * (A @ self.Z0), axis=0) for A in self.supports])


def cascaded_channel(p_u, p_b, geom: RisGeometry, profiles: RisProfileSet, mc: McModel,
                     k: float) -> np.ndarray:
    elements = element_positions(geom)
    a_u = nf_steering(p_u, geom, k, elements)
    a_b = nf_steering(p_b, geom, k, elements)
    W = profiles.W
    if not np.any(mc.coeffs):
        return (a_u * a_b) @ W
    X = solve_coupled(scattering_matrix(mc), W, a_b)
    return (W * X).T @ a_u


def channel_gain(radio: RadioConfig, p_u, p_r, p_b, phase_offset: float = 0.0) -> ChannelGain:
    d_ur = np.linalg.norm(as_position(p_u) - as_position(p_r))
    d_rb = np.linalg.norm(as_position(p_r) - as_position(p_b))
    if d_ur == 0.0 or d_rb == 0.0:
        raise GeometryError("zero link distance in channel gain")
    mag = (radio.wavelength ** 2 * np.sqrt(radio.tx_power_w * radio.tx_gain * radio.rx_gain)
           / (16.0 * np.pi ** 2 * d_ur * d_rb))
    return ChannelGain(complex(mag * np.exp(1j * phase_offset)), float(phase_offset))


def simulate_observation(scenario: Scenario, mc: McModel, seed=None, noise_var=None,
                         phase_offset=None) -> Observation:
    """Draw ``y = beta h + n`` with circular Gaussian noise.

    The global phase offset is drawn uniformly on ``[0, 2 pi)`` from the same
    seeded stream unless given explicitly.
    """
    rng = np.random.default_rng(seed)
    if phase_offset is None:
        phase_offset = rng.uniform(0.0, 2.0 * np.pi)
    radio = scenario.radio
    gain = channel_gain(radio, scenario.ue_position, scenario.geom.center,
                        scenario.bs_position, phase_offset)
    h = cascaded_channel(scenario.ue_position, scenario.bs_position, scenario.geom,
                         scenario.profiles, mc, radio.wavenumber)
    var = radio.noise_var if noise_var is None else float(noise_var)
    n = np.sqrt(var / 2.0) * (rng.standard_normal(h.size) + 1j * rng.standard_normal(h.size))
    return Observation(y=gain.beta * h + n, noise_var=var,
                       ue_position=scenario.ue_position.copy(), mc_coeffs=mc.coeffs.copy(),
                       beta=gain.beta, seed=seed, meta={"phase_offset": gain.phase_offset})
