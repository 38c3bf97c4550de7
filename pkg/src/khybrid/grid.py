"""Periodic phase-space grid and the spectral calculus every module consumes.

The classical phase space (q, p) is discretized on a rectangular box treated
as a 2-torus.  All differentiation of periodic (decaying) fields is Fourier
spectral; quadrature is the rectangle rule, which is spectrally accurate for
periodic integrands.  The coordinate tables q and p themselves are *not*
periodic: operations that need their derivatives use the analytic values
(1 and 0) via explicit product rules instead of spectral differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import fft as _fft


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class PhaseSpaceGrid:
    """Uniform periodic discretization of the (q, p) phase space.

    Field arrays live on this grid with shape (n_q, n_p) plus optional
    trailing quantum axes; index [i, j] sits at (q_min + i*dq, p_min + j*dp).
    `hbar` is shared by every field and operator defined on the grid.
    """

    q_min: float
    q_max: float
    p_min: float
    p_max: float
    n_q: int
    n_p: int
    hbar: float = 1.0

    def __post_init__(self):
        if self.q_max <= self.q_min or self.p_max <= self.p_min:
            raise GridError("degenerate bounds: need q_min < q_max and p_min < p_max")
        for name, n in (("n_q", self.n_q), ("n_p", self.n_p)):
            if n < 8 or n % 2 != 0:
                raise GridError(f"{name} must be even and >= 8, got {n}")
        if not self.hbar > 0:
            raise GridError(f"hbar must be positive, got {self.hbar}")

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / self.n_q

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / self.n_p

    @property
    def cell_area(self) -> float:
        return self.dq * self.dp

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_q, self.n_p)

    @cached_property
    def q(self) -> np.ndarray:
        return self.q_min + self.dq * np.arange(self.n_q)

    @cached_property
    def p(self) -> np.ndarray:
        return self.p_min + self.dp * np.arange(self.n_p)

    @cached_property
    def qq(self) -> np.ndarray:
        """Coordinate table q, broadcast to the full grid shape."""
        return np.broadcast_to(self.q[:, None], self.shape).copy()

    @cached_property
    def pp(self) -> np.ndarray:
        """Coordinate table p, broadcast to the full grid shape."""
        return np.broadcast_to(self.p[None, :], self.shape).copy()

    @cached_property
    def k_q(self) -> np.ndarray:
        """Wavenumbers along q in FFT ordering."""
        return 2.0 * np.pi * _fft.fftfreq(self.n_q, d=self.dq)

    @cached_property
    def k_p(self) -> np.ndarray:
        """Wavenumbers along p in FFT ordering."""
        return 2.0 * np.pi * _fft.fftfreq(self.n_p, d=self.dp)

    def _expand(self, k: np.ndarray, axis: int, ndim: int) -> np.ndarray:
        shape = [1] * ndim
        shape[axis] = k.size
        return k.reshape(shape)

    def deriv_q(self, f: np.ndarray) -> np.ndarray:
        """Spectral d/dq, broadcasting over any trailing axes."""
        spec = _fft.fft(np.asarray(f, dtype=complex), axis=0)
        spec *= 1j * self._expand(self.k_q, 0, f.ndim)
        out = _fft.ifft(spec, axis=0)
        return out.real if np.isrealobj(f) else out

    def deriv_p(self, f: np.ndarray) -> np.ndarray:
        """Spectral d/dp, broadcasting over any trailing axes."""
        spec = _fft.fft(np.asarray(f, dtype=complex), axis=1)
        spec *= 1j * self._expand(self.k_p, 1, f.ndim)
        out = _fft.ifft(spec, axis=1)
        return out.real if np.isrealobj(f) else out

    def dealias(self, f: np.ndarray) -> np.ndarray:
        """Optional 2/3-rule truncation for stress tests; off by default."""
        spec = _fft.fft2(np.asarray(f, dtype=complex), axes=(0, 1))
        mq = np.abs(_fft.fftfreq(self.n_q)) <= 1.0 / 3.0
        mp = np.abs(_fft.fftfreq(self.n_p)) <= 1.0 / 3.0
        mask = self._expand(mq, 0, f.ndim) * self._expand(mp, 1, f.ndim)
        out = _fft.ifft2(spec * mask, axes=(0, 1))
        return out.real if np.isrealobj(f) else out

    def boundary_ring_max(self, f: np.ndarray) -> float:
        """Max pointwise magnitude on the outermost grid ring.

        For fields with trailing axes the magnitude is the Euclidean norm
        over those axes.  Used as the torus-truncation fidelity diagnostic.
        """
        mag = np.abs(f)
        while mag.ndim > 2:
            mag = np.sqrt(np.sum(mag * mag, axis=-1))
        ring = [mag[0, :], mag[-1, :], mag[:, 0], mag[:, -1]]
        return float(max(np.max(r) for r in ring))


def make_grid(q_min, q_max, p_min, p_max, n_q, n_p, hbar=1.0) -> PhaseSpaceGrid:
    if n_q < 8 or n_p < 8 or n_q % 2 or n_p % 2:
        raise GridError("count must be even and >= 8")
    return PhaseSpaceGrid(float(q_min), float(q_max), float(p_min), float(p_max),
                          int(n_q), int(n_p), float(hbar))


def gradient(grid: PhaseSpaceGrid, f: np.ndarray) -> np.ndarray:
    """Spectral gradient (d_q f, d_p f), stacked on a leading axis."""
    return np.stack([grid.deriv_q(f), grid.deriv_p(f)])


def poisson_bracket(grid: PhaseSpaceGrid, f: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Canonical bracket {f, g} = d_q f d_p g - d_p f d_q g (spectral)."""
    if f.shape != g.shape:
        raise GridError(f"grid mismatch: {f.shape} vs {g.shape}")
    return grid.deriv_q(f) * grid.deriv_p(g) - grid.deriv_p(f) * grid.deriv_q(g)


def divergence(grid: PhaseSpaceGrid, v: np.ndarray) -> np.ndarray:
    """Spectral divergence of a vector field stacked as (2, n_q, n_p, ...)."""
    if v.shape[0] != 2:
        raise GridError("vector field must have leading axis of length 2")
    return grid.deriv_q(v[0]) + grid.deriv_p(v[1])


def integrate(grid: PhaseSpaceGrid, f: np.ndarray):
    """Rectangle-rule integral over the torus; entrywise for trailing axes.

    numpy's pairwise summation keeps the reduction order fixed, so results
    are reproducible independent of threading.
    """
    return np.sum(f, axis=(0, 1)) * grid.cell_area


def norm_l2(grid: PhaseSpaceGrid, f: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.abs(f) ** 2) * grid.cell_area))


def apply_J(v: np.ndarray) -> np.ndarray:
    """Apply the symplectic matrix J = [[0, 1], [-1, 0]]: (v_q, v_p) -> (v_p, -v_q)."""
    return np.stack([v[1], -v[0]])


@dataclass(frozen=True)
class SymplecticPotential:
    """Potential A with dA giving the canonical symplectic form.

    kind 'canonical' is A = (p, 0); kind 'rotational' is A = Jz/2 = (p/2, -q/2).
    An optional smooth periodic gauge shift phi adds grad(phi), differentiated
    spectrally; the kind part uses analytic derivatives via product rules.
    """

    grid: PhaseSpaceGrid
    kind: str = "canonical"
    phi: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("canonical", "rotational"):
            raise GridError(f"unknown symplectic potential kind {self.kind!r}")

    def values(self) -> np.ndarray:
        g = self.grid
        if self.kind == "canonical":
            base = np.stack([g.pp, np.zeros(g.shape)])
        else:
            base = np.stack([g.pp / 2.0, -g.qq / 2.0])
        if self.phi is not None:
            base = base + gradient(g, self.phi)
        return base

    def div_density_J(self, D: np.ndarray) -> np.ndarray:
        """div(D J A) with the coordinate growth handled analytically.

        For the canonical kind J A = (0, -p) so div(D J A) = -d_p(p D)
        = -(D + p d_p D); for the rotational kind J A = (-q/2, -p/2) so
        div(D J A) = -D - (q d_q D + p d_p D)/2.  A gauge shift phi
        contributes div(D J grad(phi)) = {D, phi}, all spectral.
        """
        g = self.grid
        if self.kind == "canonical":
            out = -(D + g.pp * g.deriv_p(D))
        else:
            out = -D - 0.5 * (g.qq * g.deriv_q(D) + g.pp * g.deriv_p(D))
        if self.phi is not None:
            out = out + poisson_bracket(g, D, self.phi)
        return out

    def shifted(self, phi: np.ndarray) -> "SymplecticPotential":
        new_phi = phi if self.phi is None else self.phi + phi
        return SymplecticPotential(self.grid, self.kind, new_phi)
