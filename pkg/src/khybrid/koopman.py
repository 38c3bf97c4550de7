"""Classical mechanics via Koopman wavefunctions (KvN and KvH).

The KvN generator transports chi along the Hamiltonian flow; the KvH
generator adds the phase-space Lagrangian L = p d_p H - H as a local phase
source.  The KvH classical density is the momentum map

    rho_c = |chi|^2 + hbar Im{chi*, chi} - div(|chi|^2 J A),

which for the canonical potential A = (p, 0) reads
|chi|^2 + d_p(p |chi|^2) + hbar Im{chi*, chi}.  This is the sign that makes
rho_c obey the Liouville equation along the KvH flow and that matches the
hybrid density trace; see README for the convention notes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (PhaseSpaceGrid, SymplecticPotential, apply_J, gradient,
                   integrate, poisson_bracket)
from .quantum import DEFAULT_EPS_REL, HybridHamiltonian


class KoopmanError(ValueError):
    pass


@dataclass(frozen=True)
class ScalarHamiltonian:
    """Classical Hamiltonian with analytic gradients (no sawtooth spectral
    differentiation of the coordinate growth)."""

    grid: PhaseSpaceGrid
    values: np.ndarray
    dq: np.ndarray
    dp: np.ndarray

    @classmethod
    def from_hybrid(cls, ham: HybridHamiltonian) -> "ScalarHamiltonian":
        if ham.n != 1:
            raise KoopmanError("scalar Hamiltonian requires a 1-level quantum part")
        extra = ham.values()[..., 0, 0].real - ham.h_classical()
        return cls(ham.grid, ham.h_classical() + extra,
                   ham.grad_q()[..., 0, 0].real, ham.grad_p()[..., 0, 0].real)

    @property
    def lagrangian(self) -> np.ndarray:
        """Phase-space Lagrangian p d_p H - H."""
        return self.grid.pp * self.dp - self.values

    def x_field(self) -> np.ndarray:
        return np.stack([self.dp, -self.dq])

    def bracket_with(self, f: np.ndarray) -> np.ndarray:
        """{H, f} with analytic gradients of H and spectral gradients of f."""
        g = self.grid
        return self.dq * g.deriv_p(f) - self.dp * g.deriv_q(f)


def _require_scalar(chi: np.ndarray):
    if chi.ndim != 2:
        raise KoopmanError("Koopman wavefunction must be a scalar (n=1) field")


def kvn_rhs(H: ScalarHamiltonian, chi: np.ndarray) -> np.ndarray:
    """d_t chi = {H, chi} (the KvN Liouvillian flow)."""
    _require_scalar(chi)
    return H.bracket_with(chi)


def kvh_rhs(H: ScalarHamiltonian, chi: np.ndarray) -> np.ndarray:
    """i hbar d_t chi = i hbar {H, chi} - L chi, with L = p d_p H - H."""
    _require_scalar(chi)
    return H.bracket_with(chi) + (1j / H.grid.hbar) * H.lagrangian * chi


def kvh_classical_density(grid: PhaseSpaceGrid, chi: np.ndarray,
                          potential: SymplecticPotential | None = None) -> np.ndarray:
    """Liouville density of KvH theory, computed in the wavefunction form.

    rho_c = D + hbar Im{chi*, chi} - div(D J A) with D = |chi|^2; the middle
    term equals div(D J grad S) wherever the polar phase S exists, so the
    (D, S) form is recovered without touching its phase singularities.
    """
    _require_scalar(chi)
    if potential is None:
        potential = SymplecticPotential(grid)
    D = np.abs(chi) ** 2
    phase_term = grid.hbar * np.imag(poisson_bracket(grid, np.conj(chi), chi))
    return D + phase_term - potential.div_density_J(D)


@dataclass
class MadelungPair:
    D: np.ndarray
    S: np.ndarray
    support: np.ndarray  # bool mask where the phase is well defined


def madelung_split(grid: PhaseSpaceGrid, chi: np.ndarray,
                   eps_rel: float = DEFAULT_EPS_REL) -> MadelungPair:
    """Polar decomposition chi = sqrt(D) exp(i S / hbar) on the support."""
    _require_scalar(chi)
    D = np.abs(chi) ** 2
    eps = eps_rel * float(np.max(D))
    support = D > 1e3 * eps
    S = grid.hbar * np.angle(chi)
    return MadelungPair(D, S, support)


def madelung_combine(grid: PhaseSpaceGrid, pair: MadelungPair) -> np.ndarray:
    if np.any(pair.D < 0):
        raise KoopmanError("Madelung amplitude D must be nonnegative")
    return np.sqrt(pair.D) * np.exp(1j * pair.S / grid.hbar)


def kvn_hamiltonian(H: ScalarHamiltonian, chi: np.ndarray) -> float:
    """h_KvN = hbar * integral of H Im{chi*, chi}; collapses for real chi."""
    g = H.grid
    term = np.imag(poisson_bracket(g, np.conj(chi), chi))
    return float(g.hbar * integrate(g, H.values * term))


def kvh_hamiltonian(H: ScalarHamiltonian, chi: np.ndarray,
                    potential: SymplecticPotential | None = None) -> float:
    """h_KvH = integral of H rho_c; equals Re<chi, covariant Liouvillian chi>."""
    rho = kvh_classical_density(H.grid, chi, potential)
    return float(np.real(integrate(H.grid, H.values * rho)))


def kvh_energy_direct(H: ScalarHamiltonian, chi: np.ndarray) -> float:
    """Independent evaluation Re int chi* (i hbar {H, chi} - L chi)."""
    g = H.grid
    rhs = 1j * g.hbar * H.bracket_with(chi) - H.lagrangian * chi
    return float(np.real(integrate(g, np.conj(chi) * rhs)))


def diamond(grid: PhaseSpaceGrid, psi: np.ndarray, w: np.ndarray) -> np.ndarray:
    """psi <> w = (1/2) Re(<w, grad psi> - <psi, grad w>), a real 2-vector field.

    Works for scalar chi and for n-component wavefunctions (the pairing sums
    over the quantum index).
    """
    if psi.shape != w.shape:
        raise KoopmanError(f"grid mismatch: {psi.shape} vs {w.shape}")
    gpsi = gradient(grid, psi)
    gw = gradient(grid, w)
    term = np.conj(w)[None, ...] * gpsi - np.conj(psi)[None, ...] * gw
    if term.ndim == 4:
        term = np.sum(term, axis=-1)
    return 0.5 * np.real(term)


def kvn_bracket_eval(grid: PhaseSpaceGrid, chi: np.ndarray, dfdchi: np.ndarray,
                     dkdchi: np.ndarray, eps_rel: float = DEFAULT_EPS_REL) -> float:
    """Noncanonical KvN bracket {f, k}_chi evaluated on supplied functional
    derivatives: int (chi<>df) . J (chi<>dk) / (|chi|^2 + eps)."""
    D = np.abs(chi) ** 2
    if chi.ndim == 3:
        D = np.sum(D, axis=-1)
    eps = eps_rel * float(np.max(D))
    a = diamond(grid, chi, dfdchi)
    b = diamond(grid, chi, dkdchi)
    jb = apply_J(b)
    dens = (a[0] * jb[0] + a[1] * jb[1]) / (D + eps)
    return float(integrate(grid, dens))


def gaussian_density(grid: PhaseSpaceGrid, q0: float, p0: float, sigma: float) -> np.ndarray:
    """Normalized isotropic Gaussian on the grid (plain values, no wrap)."""
    r2 = (grid.qq - q0) ** 2 + (grid.pp - p0) ** 2
    return np.exp(-r2 / (2.0 * sigma ** 2)) / (2.0 * np.pi * sigma ** 2)


def kvh_gaussian_state(grid: PhaseSpaceGrid, q0: float, p0: float,
                       sigma: float) -> np.ndarray:
    """Coherent KvH initialization with an exactly known classical density.

    chi = sqrt(D) exp(i S / hbar) with D the normalized Gaussian and
    S = (q - q0)(p - p0)/2 + p0 (q - q0).  The cross phase makes the momentum
    map radial: rho_c = D(r) (2 - r^2 / (2 sigma^2)) with r the distance from
    (q0, p0), so rho_c integrates to one and rotates rigidly under the
    harmonic flow.  A smooth decaying chi cannot make rho_c pointwise
    positive (the second radial moment of rho_c vanishes for any such state),
    so the mild negative tail beyond r = 2 sigma is intrinsic, not a
    construction defect.
    """
    D = gaussian_density(grid, q0, p0, sigma)
    qt = grid.qq - q0
    pt = grid.pp - p0
    S = 0.5 * qt * pt + p0 * qt
    return np.sqrt(D) * np.exp(1j * S / grid.hbar)


def kvh_gaussian_density_exact(grid: PhaseSpaceGrid, q0: float, p0: float,
                               sigma: float) -> np.ndarray:
    """Closed-form rho_c of kvh_gaussian_state (plane-limit expression)."""
    D = gaussian_density(grid, q0, p0, sigma)
    r2 = (grid.qq - q0) ** 2 + (grid.pp - p0) ** 2
    return D * (2.0 - r2 / (2.0 * sigma ** 2))
