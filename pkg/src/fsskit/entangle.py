"""Two-photon polarization state of the XX -> X cascade.

Basis ordering for two-photon operators is (H_XX H_X, H_XX V_X, V_XX H_X,
V_XX V_X).  Single-photon circular states follow the package Stokes
convention: R = (1, i)/sqrt(2) has V = +1, L = (1, -i)/sqrt(2).

A coupling S_c mixes the linear exciton states into elliptical eigenstates
P = alpha H - i beta V and Q = alpha V - i beta H.  The biexciton photon is
emitted on the time-reversed branch of the cascade and therefore carries the
complex-conjugate polarization, P_XX = alpha H + i beta V and
Q_XX = alpha V + i beta H.  With this convention the tau = 0 state is Phi+
in the HV basis for every alpha and tends to (R L + L R)/sqrt(2) when
S_c >> S.  Applying the X-photon form to both photons instead gives
(L L - R R)/sqrt(2) in that limit, a co-circular state with opposite
correlations; ``two_photon_state(..., same_handedness=True)`` keeps that
variant available for comparison.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .core import DomainError

HBAR_UEV_NS = 0.6582119569   # ueV ns

H = np.array([1.0, 0.0], dtype=complex)
V = np.array([0.0, 1.0], dtype=complex)
D = (H + V) / math.sqrt(2)
A = (H - V) / math.sqrt(2)
R = (H + 1j * V) / math.sqrt(2)
L = (H - 1j * V) / math.sqrt(2)

BASES = {"rectilinear": (H, V), "diagonal": (D, A), "circular": (R, L)}
BELL = ("phi_plus", "phi_minus", "psi_plus", "psi_minus")


class DegenerateBasisError(DomainError):
    """S = S_c = 0: every polarization basis diagonalizes the exciton."""


def hybridized_splitting(s: float, s_c: float) -> float:
    """S_r, the splitting of the hybridized eigenstates: sqrt(S^2 + S_c^2)."""
    return math.hypot(s, s_c)


def eigenstate_coefficients(s: float, s_c: float) -> tuple[float, float]:
    """(alpha, beta) with alpha^2 + beta^2 = 1 and beta/alpha = S_c / (S_r + S)."""
    if s < 0 or s_c < 0:
        raise DomainError("S and S_c must be >= 0")
    if s == 0 and s_c == 0:
        raise DegenerateBasisError("S = S_c = 0 leaves the eigenbasis undefined")
    # beta/alpha = S_c/(S_r+S) = tan(theta/2) with theta = atan2(S_c, S)
    half = 0.5 * math.atan2(s_c, s)
    return math.cos(half), math.sin(half)


@dataclass(frozen=True)
class NonCollinearParams:
    s: float                   # ueV
    s_c: float = 0.0           # ueV
    tau: float = 0.0           # ns
    alpha: float = field(init=False)
    beta: float = field(init=False)
    s_r: float = field(init=False)

    def __post_init__(self):
        if self.tau < 0:
            raise DomainError("tau must be >= 0")
        a, b = eigenstate_coefficients(self.s, self.s_c)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "s_r", hybridized_splitting(self.s, self.s_c))

    @property
    def phase(self) -> float:
        """S tau / hbar in radians."""
        return self.s * self.tau / HBAR_UEV_NS


def exciton_states(alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """(P_X, Q_X) Jones vectors of the exciton photon."""
    return alpha * H - 1j * beta * V, alpha * V - 1j * beta * H


def biexciton_states(alpha: float, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """(P_XX, Q_XX): complex conjugates of the exciton-photon states."""
    p, q = exciton_states(alpha, beta)
    return p.conj(), q.conj()


@dataclass(frozen=True)
class TwoPhotonState:
    rho: np.ndarray

    @classmethod
    def pure(cls, psi: np.ndarray) -> "TwoPhotonState":
        psi = np.asarray(psi, dtype=complex)
        norm = np.linalg.norm(psi)
        if norm == 0:
            raise DomainError("zero state vector")
        psi = psi / norm
        return cls(np.outer(psi, psi.conj()))

    @property
    def purity(self) -> float:
        return float(np.real(np.trace(self.rho @ self.rho)))


def _state_vector(alpha: float, beta: float, phase: float,
                  same_handedness: bool = False) -> np.ndarray:
    p_x, q_x = exciton_states(alpha, beta)
    p_xx, q_xx = (p_x, q_x) if same_handedness else biexciton_states(alpha, beta)
    return (np.kron(p_xx, p_x) + np.exp(1j * phase) * np.kron(q_xx, q_x)) / math.sqrt(2)


def two_photon_state(p: NonCollinearParams, same_handedness: bool = False) -> TwoPhotonState:
    """Pure-state density matrix of the cascade at delay ``p.tau``."""
    return TwoPhotonState.pure(_state_vector(p.alpha, p.beta, p.phase, same_handedness))


def bell_vector(name: str, basis: str | tuple[float, float] = "hv") -> np.ndarray:
    """A Bell state built on H/V, or on the eigenstates P/Q for basis=(alpha, beta)."""
    if isinstance(basis, str):
        if basis != "hv":
            raise DomainError(f"unknown basis {basis!r}")
        (h_xx, v_xx), (h_x, v_x) = (H, V), (H, V)
    else:
        alpha, beta = basis
        h_xx, v_xx = biexciton_states(alpha, beta)
        h_x, v_x = exciton_states(alpha, beta)
    kk = {"phi_plus": (np.kron(h_xx, h_x), np.kron(v_xx, v_x), 1),
          "phi_minus": (np.kron(h_xx, h_x), np.kron(v_xx, v_x), -1),
          "psi_plus": (np.kron(h_xx, v_x), np.kron(v_xx, h_x), 1),
          "psi_minus": (np.kron(h_xx, v_x), np.kron(v_xx, h_x), -1)}
    if name not in kk:
        raise DomainError(f"unknown Bell state {name!r}")
    a, b, sign = kk[name]
    return (a + sign * b) / math.sqrt(2)


def fidelity_to_bell(state: TwoPhotonState, bell: str = "phi_plus",
                     basis: str | tuple[float, float] = "hv") -> float:
    """<B|rho|B>; ``basis`` is "hv" or the (alpha, beta) of the eigenbasis."""
    b = bell_vector(bell, basis)
    return float(np.real(b.conj() @ state.rho @ b))


def coincidence_probability(state: TwoPhotonState, e_xx: np.ndarray,
                            e_x: np.ndarray) -> float:
    proj = np.kron(e_xx, e_x)
    return float(np.real(proj.conj() @ state.rho @ proj))


def degree_of_correlation(state: TwoPhotonState, basis: str = "rectilinear") -> float:
    """(P_co - P_cross) / (P_co + P_cross) for both photons analysed in ``basis``.

    Co-polarized means the same label on both photons (HH, DD, RR).
    """
    if basis not in BASES:
        raise DomainError(f"unknown basis {basis!r}")
    a, b = BASES[basis]
    co = coincidence_probability(state, a, a) + coincidence_probability(state, b, b)
    cross = coincidence_probability(state, a, b) + coincidence_probability(state, b, a)
    total = co + cross
    if total <= 1e-15:
        raise DomainError("no coincidences in this basis")
    return (co - cross) / total


SWEEP_COLUMNS = ("s", "s_c", "tau", "alpha", "beta", "fidelity",
                 "C_rect", "C_diag", "C_circ")


def sweep(s_values: Iterable[float], s_c_values: Iterable[float],
          tau_values: Iterable[float]) -> list[tuple[float, ...]]:
    """Rows of SWEEP_COLUMNS over the full grid; fidelity is to Phi+ in HV."""
    rows = []
    for s in s_values:
        for s_c in s_c_values:
            for tau in tau_values:
                p = NonCollinearParams(float(s), float(s_c), float(tau))
                st = two_photon_state(p)
                rows.append((p.s, p.s_c, p.tau, p.alpha, p.beta,
                             fidelity_to_bell(st, "phi_plus", "hv"),
                             degree_of_correlation(st, "rectilinear"),
                             degree_of_correlation(st, "diagonal"),
                             degree_of_correlation(st, "circular")))
    return rows
