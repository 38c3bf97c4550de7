"""Finite-level quantum algebra on phase-space fields.

The quantum subsystem is C^n (default n=2).  Hybrid wavefunctions are arrays
of shape (n_q, n_p, n); operator-valued fields are (n_q, n_p, n, n).  Matrix
products are pointwise over the grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import PhaseSpaceGrid, integrate

DEFAULT_EPS_REL = 1e-12

SIGMA_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SIGMA_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=complex)
SIGMA_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
PAULI = {"sigma_x": SIGMA_X, "sigma_y": SIGMA_Y, "sigma_z": SIGMA_Z}


class QuantumError(ValueError):
    pass


def _check_same(A: np.ndarray, B: np.ndarray):
    if A.shape != B.shape:
        raise QuantumError(f"dimension mismatch: {A.shape} vs {B.shape}")


def matmul_field(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pointwise matrix product of two operator fields."""
    return A @ B


def commutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    _check_same(A, B)
    return A @ B - B @ A


def anticommutator(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    _check_same(A, B)
    return A @ B + B @ A


def dagger(A: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(A, -1, -2))


def is_hermitian_field(A: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.max(np.abs(A - dagger(A))) <= tol * max(1.0, float(np.max(np.abs(A)))))


def op_poisson_bracket(grid: PhaseSpaceGrid, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Matrix-valued canonical bracket {A, B} with product order preserved.

    Entrywise spectral derivatives; note {A, B} != -{B, A} once the factors
    stop commuting.  Intended for periodic (decaying) operator fields; fields
    with coordinate growth should supply analytic gradients instead.
    """
    _check_same(A, B)
    return (grid.deriv_q(A) @ grid.deriv_p(B)
            - grid.deriv_p(A) @ grid.deriv_q(B))


def apply(A: np.ndarray, psi: np.ndarray) -> np.ndarray:
    """Pointwise matrix-vector product (A psi)(z) = A(z) psi(z)."""
    if A.shape[:-1] != psi.shape or A.shape[-1] != psi.shape[-1]:
        raise QuantumError(f"dimension mismatch: {A.shape} vs {psi.shape}")
    return np.einsum("...ab,...b->...a", A, psi)


def density_norm(psi: np.ndarray) -> np.ndarray:
    """Pointwise squared norm ||psi||^2(z)."""
    return np.sum(np.abs(psi) ** 2, axis=-1)


def epsilon_of(psi: np.ndarray, eps_rel: float = DEFAULT_EPS_REL) -> float:
    """Regularization floor: eps_rel times the peak density."""
    return eps_rel * float(np.max(density_norm(psi)))


def expectation_field(A: np.ndarray, psi: np.ndarray,
                      eps_rel: float = DEFAULT_EPS_REL) -> np.ndarray:
    """<A>(z) = Re(psi^dag A psi) / (||psi||^2 + eps) for Hermitian A."""
    if not is_hermitian_field(A, 1e-10):
        raise QuantumError("expectation_field requires a Hermitian operator field")
    num = np.real(np.einsum("...a,...ab,...b->...", np.conj(psi), A, psi))
    den = density_norm(psi) + epsilon_of(psi, eps_rel)
    return num / den


def outer(psi: np.ndarray, phi: np.ndarray | None = None) -> np.ndarray:
    """Pointwise rank-1 operator psi phi^dag (phi defaults to psi)."""
    if phi is None:
        phi = psi
    return np.einsum("...a,...b->...ab", psi, np.conj(phi))


def quantum_density(grid: PhaseSpaceGrid, P: np.ndarray) -> np.ndarray:
    """rho_q = integral of the operator field over phase space (n x n matrix)."""
    rho = integrate(grid, P)
    return 0.5 * (rho + rho.conj().T)


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))


def min_eigenvalue(rho: np.ndarray) -> float:
    if rho.shape[-1] == 2:
        return float(_eigmin_2x2(rho[None, ...])[0])
    return float(np.min(np.linalg.eigvalsh(rho)))


def _eigmin_2x2(field: np.ndarray) -> np.ndarray:
    """Closed-form smallest eigenvalue of Hermitian 2x2 matrices (batched)."""
    a = np.real(field[..., 0, 0])
    d = np.real(field[..., 1, 1])
    b = field[..., 0, 1]
    half = 0.5 * (a + d)
    rad = np.sqrt((0.5 * (a - d)) ** 2 + np.abs(b) ** 2)
    return half - rad


def min_eigenvalue_field(field: np.ndarray) -> float:
    """Min over the grid of the pointwise smallest eigenvalue.

    2x2 goes through the closed form; larger n falls back to LAPACK.
    """
    if field.shape[-1] == 2:
        return float(np.min(_eigmin_2x2(field)))
    return float(np.min(np.linalg.eigvalsh(field)))


def _as_matrix(M, n: int) -> np.ndarray:
    M = np.asarray(M, dtype=complex)
    if M.shape != (n, n):
        raise QuantumError(f"expected a {n}x{n} matrix, got {M.shape}")
    if np.max(np.abs(M - M.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(M))):
        raise QuantumError("matrix must be Hermitian")
    return M


CLASSICAL_CATALOG = ("harmonic", "quartic", "free")
COUPLING_CATALOG = ("none", "linear", "quadratic", "sine")


@dataclass
class HybridHamiltonian:
    """H(q, p) = H_C(q, p) 1 + H_Q + v(q) W with analytic derivatives.

    Both H_C and v come from small closed-form catalogs, so every gradient
    and Hessian entry used by the flow fields is exact (no sawtooth Gibbs
    artifacts from differentiating the non-periodic coordinate growth).

    classical: 'harmonic' (omega (q^2+p^2)/2), 'quartic' (p^2/2 + a q^4),
    'free' (p^2/2).  coupling: v(q) in {lambda q, lambda q^2,
    lambda sin(2 pi q / L_q)} applied to the Hermitian matrix W.
    """

    grid: PhaseSpaceGrid
    n: int = 2
    classical: str = "harmonic"
    omega_c: float = 1.0
    quartic_a: float = 0.25
    quantum: np.ndarray | None = None
    coupling: str = "none"
    strength: float = 0.0
    w_matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.classical not in CLASSICAL_CATALOG:
            raise QuantumError(f"unknown classical Hamiltonian {self.classical!r}")
        if self.coupling not in COUPLING_CATALOG:
            raise QuantumError(f"unknown coupling {self.coupling!r}")
        if self.quantum is None:
            self.quantum = np.zeros((self.n, self.n), dtype=complex)
        self.quantum = _as_matrix(self.quantum, self.n)
        if self.w_matrix is None:
            self.w_matrix = np.zeros((self.n, self.n), dtype=complex)
        self.w_matrix = _as_matrix(self.w_matrix, self.n)
        self._cache: dict[str, np.ndarray] = {}

    # -- classical part -------------------------------------------------
    def h_classical(self) -> np.ndarray:
        g = self.grid
        if self.classical == "harmonic":
            return 0.5 * self.omega_c * (g.qq ** 2 + g.pp ** 2)
        if self.classical == "quartic":
            return 0.5 * g.pp ** 2 + self.quartic_a * g.qq ** 4
        return 0.5 * g.pp ** 2

    def dq_classical(self) -> np.ndarray:
        g = self.grid
        if self.classical == "harmonic":
            return self.omega_c * g.qq
        if self.classical == "quartic":
            return 4.0 * self.quartic_a * g.qq ** 3
        return np.zeros(g.shape)

    def dp_classical(self) -> np.ndarray:
        g = self.grid
        if self.classical == "harmonic":
            return self.omega_c * g.pp
        return g.pp.copy()

    def _hess_classical(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        g = self.grid
        zero = np.zeros(g.shape)
        if self.classical == "harmonic":
            w = self.omega_c
            return w * np.ones(g.shape), zero, w * np.ones(g.shape)
        if self.classical == "quartic":
            return 12.0 * self.quartic_a * g.qq ** 2, zero, np.ones(g.shape)
        return zero, zero, np.ones(g.shape)

    # -- coupling profile v(q) ------------------------------------------
    def _v(self, order: int) -> np.ndarray:
        """v(q) and its q-derivatives (order 0, 1, 2)."""
        g = self.grid
        lam = self.strength
        if self.coupling == "none" or lam == 0.0:
            return np.zeros(g.shape)
        if self.coupling == "linear":
            return [lam * g.qq, lam * np.ones(g.shape), np.zeros(g.shape)][order]
        if self.coupling == "quadratic":
            return [lam * g.qq ** 2, 2.0 * lam * g.qq, 2.0 * lam * np.ones(g.shape)][order]
        k = 2.0 * np.pi / (g.q_max - g.q_min)
        return [lam * np.sin(k * g.qq), lam * k * np.cos(k * g.qq),
                -lam * k * k * np.sin(k * g.qq)][order]

    # -- assembled operator field and derivatives ------------------------
    def _assemble(self, scalar: np.ndarray, coupling_profile: np.ndarray,
                  with_quantum: bool) -> np.ndarray:
        eye = np.eye(self.n, dtype=complex)
        out = scalar[..., None, None] * eye
        if with_quantum:
            out = out + self.quantum
        out = out + coupling_profile[..., None, None] * self.w_matrix
        return out

    def values(self) -> np.ndarray:
        if "values" not in self._cache:
            self._cache["values"] = self._assemble(self.h_classical(), self._v(0), True)
        return self._cache["values"]

    def grad_q(self) -> np.ndarray:
        if "grad_q" not in self._cache:
            self._cache["grad_q"] = self._assemble(self.dq_classical(), self._v(1), False)
        return self._cache["grad_q"]

    def grad_p(self) -> np.ndarray:
        if "grad_p" not in self._cache:
            self._cache["grad_p"] = self._assemble(self.dp_classical(),
                                                   np.zeros(self.grid.shape), False)
        return self._cache["grad_p"]

    def grad_q_rest(self) -> np.ndarray:
        """d_q of the non-scalar part of H (coupling only); the classical
        multiple of the identity is kept separate so it can be handled
        exactly wherever it would otherwise pick up regularization noise."""
        if "grad_q_rest" not in self._cache:
            self._cache["grad_q_rest"] = self._v(1)[..., None, None] * self.w_matrix
        return self._cache["grad_q_rest"]

    def grad_p_rest(self) -> np.ndarray:
        if "grad_p_rest" not in self._cache:
            self._cache["grad_p_rest"] = np.zeros(self.grid.shape + (self.n, self.n),
                                                  dtype=complex)
        return self._cache["grad_p_rest"]

    def x_field(self) -> np.ndarray:
        """Operator-valued Hamiltonian vector field X_H = (d_p H, -d_q H)."""
        if "x_field" not in self._cache:
            self._cache["x_field"] = np.stack([self.grad_p(), -self.grad_q()])
        return self._cache["x_field"]

    def x_field_rest(self) -> np.ndarray:
        """X of the non-scalar part alone: X_H = X_{H_C} 1 + x_field_rest."""
        if "x_rest" not in self._cache:
            self._cache["x_rest"] = np.stack([self.grad_p_rest(), -self.grad_q_rest()])
        return self._cache["x_rest"]

    def x_field_grad(self) -> np.ndarray:
        """d_j (X_H)_k, shape (2, 2, n_q, n_p, n, n), all analytic."""
        if "x_grad" not in self._cache:
            hqq, hqp, hpp = self._hess_classical()
            zeros = np.zeros(self.grid.shape)
            vpp = self._v(2)
            # X_q = d_p H, X_p = -d_q H; only H_C and v(q) contribute.
            dq_Xq = self._assemble(hqp, zeros, False)
            dp_Xq = self._assemble(hpp, zeros, False)
            dq_Xp = self._assemble(-hqq, -vpp, False)
            dp_Xp = self._assemble(-hqp, zeros, False)
            self._cache["x_grad"] = np.stack([np.stack([dq_Xq, dq_Xp]),
                                              np.stack([dp_Xq, dp_Xp])])
        return self._cache["x_grad"]

    def x_classical(self) -> np.ndarray:
        """Scalar Hamiltonian vector field of the classical part alone."""
        return np.stack([self.dp_classical(), -self.dq_classical()])

    def lagrangian(self) -> np.ndarray:
        """Phase-space Lagrangian of the classical part, p d_p H_C - H_C."""
        return self.grid.pp * self.dp_classical() - self.h_classical()

    def p_dp(self) -> np.ndarray:
        """Operator field p d_p H (the phase source of the hybrid flow)."""
        return self.grid.pp[..., None, None] * self.grad_p()

    def is_pure_dephasing(self) -> tuple[bool, str | None]:
        """True when H = H_c + H_I sigma_k for a single Pauli matrix."""
        if self.n != 2:
            return False, None
        parts = []
        for name, sig in PAULI.items():
            cq = np.trace(self.quantum @ sig).real / 2.0
            cw = np.trace(self.w_matrix @ sig).real / 2.0
            if abs(cq) > 1e-14 or abs(cw) > 1e-14:
                parts.append(name)
        if len(parts) > 1:
            return False, None
        return True, (parts[0] if parts else None)

    def interaction_profile(self) -> np.ndarray:
        """H_I(q) such that the coupling block is H_I(q) W plus the constant
        quantum part projected on W's Pauli axis (pure-dephasing use)."""
        ok, axis = self.is_pure_dephasing()
        if not ok:
            raise QuantumError("interaction profile defined for pure-dephasing H only")
        prof = self._v(0) * 0.0
        if axis is not None:
            sig = PAULI[axis]
            cw = np.trace(self.w_matrix @ sig).real / 2.0
            cq = np.trace(self.quantum @ sig).real / 2.0
            prof = self._v(0) * cw + cq
        return prof


def build_hamiltonian(grid: PhaseSpaceGrid, *, n=2, classical="harmonic", omega_c=1.0,
                      quartic_a=0.25, quantum=None, coupling="none", strength=0.0,
                      w_matrix=None) -> HybridHamiltonian:
    return HybridHamiltonian(grid, n=n, classical=classical, omega_c=omega_c,
                             quartic_a=quartic_a, quantum=quantum, coupling=coupling,
                             strength=strength, w_matrix=w_matrix)
