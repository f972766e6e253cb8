"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors

Gauss-Legendre x uniform grid on the unit sphere, together with the
spherical harmonic transform used for every angular derivative.

Coefficients are stored per (m, l) with m >= 0 only; a real field is
f = sum_l a_l0 P_l0 + 2 Re sum_{m>0} a_lm P_lm e^{i m phi}.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np
from scipy.special import gammaln, lpmv

from .errors import ConfigError, PropagationError

log = logging.getLogger("stmcflow.grid")

MIN_THETA = 8
MIN_PHI = 16
FILTER_STRENGTH = 36.0


def normalized_legendre(lmax: int, mmax: int, x: np.ndarray) -> np.ndarray:
    """Orthonormal associated Legendre functions, shape (mmax+1, *x.shape, lmax+1).

    Entries with l < m are zero.
    """
    x = np.asarray(x, dtype=float)
    ms = np.arange(mmax + 1)
    ls = np.arange(lmax + 1)
    m_b = ms.reshape((-1,) + (1,) * x.ndim + (1,))
    l_b = ls.reshape((1,) + (1,) * x.ndim + (-1,))
    valid = l_b >= m_b
    l_safe = np.where(valid, l_b, m_b)
    lognorm = 0.5 * (np.log((2 * l_safe + 1) / (4 * np.pi)) + gammaln(l_safe - m_b + 1) - gammaln(l_safe + m_b + 1))
    # scipy includes the Condon-Shortley phase, which cancels in every quantity we form
    raw = lpmv(m_b, l_safe, x[None, ..., None])
    return np.where(valid, raw * np.exp(lognorm), 0.0)


class Derivatives(NamedTuple):
    f: np.ndarray
    t: np.ndarray
    p: np.ndarray
    tt: np.ndarray
    tp: np.ndarray
    pp: np.ndarray


@dataclass(frozen=True, eq=False)
class SphericalGrid:
    n_theta: int
    n_phi: int

    @cached_property
    def _nodes(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.n_theta)
        # north pole first
        return x[::-1].copy(), w[::-1].copy()

    @property
    def cos_theta(self) -> np.ndarray:
        return self._nodes[0]

    @property
    def gl_weights(self) -> np.ndarray:
        return self._nodes[1]

    @cached_property
    def theta(self) -> np.ndarray:
        return np.arccos(self.cos_theta)

    @cached_property
    def phi(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_phi) / self.n_phi

    @cached_property
    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.theta, self.phi, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights for dOmega = sin(theta) dtheta dphi; they sum to 4 pi."""
        return np.outer(self.gl_weights, np.full(self.n_phi, 2 * np.pi / self.n_phi))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_theta, self.n_phi)

    @property
    def size(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def lmax(self) -> int:
        return self.n_theta - 1

    @property
    def mmax(self) -> int:
        return min(self.lmax, self.n_phi // 2 - 1)

    @property
    def exactness_degree(self) -> int:
        return 2 * self.n_theta - 1

    def integrates_exactly(self, degree: int) -> bool:
        return degree <= self.exactness_degree and degree < self.n_phi

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit vectors omega at the nodes, shape (n_theta, n_phi, 3)."""
        t, p = self.mesh
        return np.stack([np.sin(t) * np.cos(p), np.sin(t) * np.sin(p), np.cos(t)], axis=-1)

    @cached_property
    def frame(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """omega_t, omega_p, omega_tt, omega_tp, omega_pp at the nodes."""
        t, p = self.mesh
        st, ct, sp, cp = np.sin(t), np.cos(t), np.sin(p), np.cos(p)
        zero = np.zeros_like(t)
        w_t = np.stack([ct * cp, ct * sp, -st], axis=-1)
        w_p = np.stack([-st * sp, st * cp, zero], axis=-1)
        w_tp = np.stack([-ct * sp, ct * cp, zero], axis=-1)
        w_pp = np.stack([-st * cp, -st * sp, zero], axis=-1)
        return w_t, w_p, -self.directions, w_tp, w_pp

    @cached_property
    def legendre(self) -> np.ndarray:
        return normalized_legendre(self.lmax, self.mmax, self.cos_theta)

    @cached_property
    def legendre_dtheta(self) -> np.ndarray:
        x = self.cos_theta[None, :, None]
        sin_t = np.sqrt(1 - x**2)
        ls = np.arange(self.lmax + 1)[None, None, :]
        ms = np.arange(self.mmax + 1)[:, None, None]
        pbar = self.legendre
        prev = np.zeros_like(pbar)
        prev[..., 1:] = pbar[..., :-1]
        with np.errstate(divide="ignore", invalid="ignore"):
            c = np.sqrt(np.where(ls > ms, (2 * ls + 1) * (ls**2 - ms**2) / (2 * ls - 1), 0.0))
        return (ls * x * pbar - c * prev) / sin_t

    @cached_property
    def legendre_dtheta2(self) -> np.ndarray:
        x = self.cos_theta[None, :, None]
        sin2 = 1 - x**2
        ls = np.arange(self.lmax + 1)[None, None, :]
        ms = np.arange(self.mmax + 1)[:, None, None]
        cot = x / np.sqrt(sin2)
        return -cot * self.legendre_dtheta - (ls * (ls + 1) - ms**2 / sin2) * self.legendre

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.broadcast_to(np.arange(self.lmax + 1)[None, :], (self.mmax + 1, self.lmax + 1))

    @cached_property
    def orders(self) -> np.ndarray:
        return np.broadcast_to(np.arange(self.mmax + 1)[:, None], (self.mmax + 1, self.lmax + 1))

    @cached_property
    def mode_mask(self) -> np.ndarray:
        return self.degrees >= self.orders

    def analyze(self, field: np.ndarray) -> np.ndarray:
        """Complex coefficients (..., mmax+1, lmax+1) of a real field (..., n_theta, n_phi)."""
        g = np.fft.rfft(field, axis=-1)[..., : self.mmax + 1] / self.n_phi
        return 2 * np.pi * np.einsum("mil,i,...im->...ml", self.legendre, self.gl_weights, g)

    def _synth(self, coeffs: np.ndarray, basis: np.ndarray) -> np.ndarray:
        gm = np.einsum("mil,...ml->...im", basis, coeffs)
        full = np.zeros((*gm.shape[:-1], self.n_phi // 2 + 1), dtype=complex)
        full[..., : self.mmax + 1] = gm
        return np.fft.irfft(full * self.n_phi, n=self.n_phi, axis=-1)

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        return self._synth(coeffs, self.legendre)

    def derivatives(self, field: np.ndarray) -> Derivatives:
        """Field and its first and second angular derivatives from one analysis."""
        if not np.all(np.isfinite(field)):
            msg = f"Non-finite values at {int(np.sum(~np.isfinite(field)))} nodes reached the spectral transform"
            raise PropagationError(msg)
        a = self.analyze(field)
        im = 1j * np.arange(self.mmax + 1)[:, None]
        return Derivatives(
            f=np.asarray(field, dtype=float),
            t=self._synth(a, self.legendre_dtheta),
            p=self._synth(a * im, self.legendre),
            tt=self._synth(a, self.legendre_dtheta2),
            tp=self._synth(a * im, self.legendre_dtheta),
            pp=self._synth(a * im**2, self.legendre),
        )

    def project(self, field: np.ndarray) -> np.ndarray:
        """Orthogonal projection onto the resolved harmonics; the nodes carry more values than the transform sees."""
        return self.synthesize(self.analyze(field))

    def gradient(self, field: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a = self.analyze(field)
        im = 1j * np.arange(self.mmax + 1)[:, None]
        return self._synth(a, self.legendre_dtheta), self._synth(a * im, self.legendre)

    def filter_factors(self, order: int) -> np.ndarray:
        if order <= 0:
            return np.ones(self.degrees.shape)
        return np.exp(-FILTER_STRENGTH * (self.degrees / max(self.lmax, 1)) ** order)

    def apply_filter(self, field: np.ndarray, order: int) -> np.ndarray:
        """Exponential low-pass; only the damped part is synthesized so resolved fields are left alone."""
        if order <= 0:
            return field
        a = self.analyze(field)
        return field + self.synthesize(a * (self.filter_factors(order) - 1.0))

    def power(self, coeffs: np.ndarray) -> np.ndarray:
        """Energy per degree, counting both signs of m."""
        weight = np.where(self.orders == 0, 1.0, 2.0)
        return np.sum(weight * np.abs(coeffs) ** 2 * self.mode_mask, axis=-2)

    def spectral_tail(self, field: np.ndarray) -> float:
        """Fraction of the non-constant energy in the top third of degrees."""
        full = self.power(self.analyze(field))
        p = full[1:]
        total = float(np.sum(p))
        # a constant field leaves only round-off above degree 0
        if total <= 1e-24 * float(np.sum(full)):
            return 0.0
        cut = (2 * self.lmax) // 3
        return float(np.sum(p[cut:])) / total

    def evaluate(self, coeffs: np.ndarray, theta: np.ndarray, phi: np.ndarray) -> np.ndarray:
        """Band-limited interpolation of coefficients at arbitrary directions."""
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        pbar = normalized_legendre(self.lmax, self.mmax, np.cos(theta))
        gm = np.einsum("m...l,ml->m...", pbar, coeffs)
        ms = np.arange(self.mmax + 1).reshape((-1,) + (1,) * theta.ndim)
        weight = np.where(ms == 0, 1.0, 2.0)
        return np.sum(weight * np.real(gm * np.exp(1j * ms * phi[None])), axis=0)

    @cached_property
    def real_basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Orthonormal real harmonics Y, Y_theta, Y_phi at the nodes and their degrees.

        Ordered by degree, then m = 0, 1, -1, 2, -2, ...
        """
        _, p = self.mesh
        ys: list[np.ndarray] = []
        yts: list[np.ndarray] = []
        yps: list[np.ndarray] = []
        degs: list[int] = []
        for ell in range(self.lmax + 1):
            for m in range(min(ell, self.mmax) + 1):
                pl = self.legendre[m, :, ell][:, None]
                dpl = self.legendre_dtheta[m, :, ell][:, None]
                if m == 0:
                    ys.append(np.broadcast_to(pl, self.shape))
                    yts.append(np.broadcast_to(dpl, self.shape))
                    yps.append(np.zeros(self.shape))
                    degs.append(ell)
                    continue
                c, s = np.sqrt(2) * np.cos(m * p), np.sqrt(2) * np.sin(m * p)
                ys.extend((pl * c, pl * s))
                yts.extend((dpl * c, dpl * s))
                yps.extend((-m * pl * s, m * pl * c))
                degs.extend((ell, ell))
        return np.array(ys), np.array(yts), np.array(yps), np.array(degs)


def build_grid(n_theta: int, n_phi: int) -> SphericalGrid:
    violations: list[str] = []
    if n_theta < MIN_THETA:
        violations.append(f"grid.n_theta must be at least {MIN_THETA}, got {n_theta}")
    if n_phi < MIN_PHI:
        violations.append(f"grid.n_phi must be at least {MIN_PHI}, got {n_phi}")
    if n_phi % 2:
        violations.append(f"grid.n_phi must be even, got {n_phi}")
    if violations:
        raise ConfigError(violations)
    log.debug("Built %d x %d grid (exact through degree %d)", n_theta, n_phi, 2 * n_theta - 1)
    return SphericalGrid(n_theta, n_phi)


def integrate(grid: SphericalGrid, field: np.ndarray) -> float:
    """Integral over the unit sphere against dOmega."""
    return float(np.sum(grid.weights * field))
