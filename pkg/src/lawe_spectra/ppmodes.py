"""Sparse block perturbations and the point modes they pull off the band.

A decaying field I**-alpha is planted on widely separated shell blocks
and added to the coupling profile.  The perturbation is compact-free
(it tends to zero), so the essential spectrum is untouched, but each
block opens a shallow well that binds an eigenvalue under the lower
band edge; the wells get shallower outward and the eigenvalue ladder
accumulates at the edge from below.

Block m has even length L_m ~ m**p and starts past spacing*m**(p+1);
with 1/2 < alpha < 1 the field is l2 but not l1 summable.  Tent test
vectors supported on the blocks give exact variational witnesses for
the deepest wells; for the shallow ones the tent's kinetic cost
m**-2p eventually exceeds the well strength m**-alpha(p+1), so the
quotients alone stop certifying binding even though the true ladder
persists at depth ~ (strength * width)**2 per block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import (build_mass_distribution, build_pd_distribution,
                    coupling_constant, gamma_profile, profile_constant)
from .discrete import delta_r_from_X
from .spectra import (eigenvalues_bisect, eigenvectors_inverse_iteration,
                      gershgorin_interval)


@dataclass(frozen=True)
class BumpField:
    """The sparse decaying field and its tent test vectors.

    ``blocks[m-1] = (s_m, L_m)``: block m covers shells s_m .. s_m + L_m.
    The field equals I**-alpha pointwise on the blocks and vanishes off
    them; the test vector of block m is the unit tent on the block,
    zero at both endpoints.
    """

    alpha: float
    p: float
    spacing: float
    blocks: tuple

    @property
    def m_max(self):
        return len(self.blocks)

    @property
    def extent(self):
        """Largest shell index touched by any block."""
        s, L = self.blocks[-1]
        return s + L

    def tent(self, m):
        """(shells, values) of the unit tent test vector on block m."""
        s, L = self.blocks[m - 1]
        i = np.arange(s, s + L + 1)
        return i, 1.0 - np.abs(2.0 * (i - s) / L - 1.0)

    def tent_norm_sq(self, m):
        _, t = self.tent(m)
        return float(t @ t)

    def tent_difference_sq(self, m):
        """Sum of squared first differences of the tent, edges included."""
        _, t = self.tent(m)
        d = np.diff(np.concatenate([[0.0], t, [0.0]]))
        return float(d @ d)

    def field(self, n):
        """Field values over shells 0..n (zero off the blocks)."""
        g = np.zeros(n + 1)
        for s, L in self.blocks:
            if s + L > n:
                break
            i = np.arange(s, s + L + 1)
            g[i] = i.astype(float) ** (-self.alpha)
        return g

    def block_of(self, shells, mass):
        """(block index, mass fraction in block +- 2) for the block
        holding the largest share; shells and mass are aligned arrays."""
        best_m, best_frac = 0, 0.0
        total = float(np.sum(mass))
        for m in range(1, self.m_max + 1):
            s, L = self.blocks[m - 1]
            sel = (shells >= s - 2) & (shells <= s + L + 2)
            frac = float(np.sum(mass[sel])) / total
            if frac > best_frac:
                best_m, best_frac = m, frac
        return best_m, best_frac


def construct_dsp(alpha=0.8, p=0.5, spacing=5.0, m_max=None, n=None):
    """Lay out the sparse blocks carrying the I**-alpha field.

    L_m = max(4, ceil(m**p) rounded up to even); s_m = ceil(spacing *
    m**(p+1)), strictly beyond spacing*m**(p+1) and pushed right if
    needed to keep at least two empty shells between blocks.  Give
    either ``m_max`` or ``n`` (blocks are laid until they would cross
    shell n - 1).
    """
    if not (0.5 < alpha < 1.0):
        raise ValidationError(f"need 1/2 < alpha < 1, got {alpha!r}")
    if not (1.0 / 3.0 < p < alpha * (p + 1.0) / 2.0):
        raise ValidationError(
            f"need 1/3 < p < alpha*(p+1)/2 = {alpha * (p + 1.0) / 2.0:.4f}, got {p!r}")
    if spacing <= 0.0:
        raise ValidationError(f"spacing must be positive, got {spacing!r}")
    if m_max is None and n is None:
        raise ValidationError("give m_max or n")

    blocks = []
    prev_end = 0
    m = 0
    while True:
        m += 1
        if m_max is not None and m > m_max:
            break
        L = max(4, 2 * int(math.ceil(m**p / 2.0)))
        lo = spacing * m ** (p + 1.0)
        s = int(math.ceil(lo))
        if s <= lo:
            s += 1
        s = max(s, prev_end + 3)
        if n is not None and s + L > n - 1:
            break
        blocks.append((s, L))
        prev_end = s + L
    if not blocks:
        raise ValidationError("no block fits in the requested range")
    return BumpField(alpha=float(alpha), p=float(p), spacing=float(spacing),
                     blocks=tuple(blocks))


def theorem_model(dsp, *, eta=0.5, gamma=2.0, b=None, zeta=0.0, N=None,
                  binding="attractive"):
    """Shell model whose coupling profile carries the sparse field.

    Normalized so the limit coupling is exactly one: Lambda_star =
    1/kappa, giving band edges -zeta*Lambda_star -+ 2.  The canonical
    strength is b = 1/(Lambda_star*K).  ``binding="attractive"`` adds
    b*field to the profile, deepening the local wells so eigenvalues
    accumulate at the lower edge from below; ``"repulsive"`` subtracts
    it, which weakens the couplings and sheds states above the upper
    edge instead, leaving nothing under the lower one.
    """
    if N is None:
        # one spare shell so a section of ``extent`` shells at i_start=1 assembles
        N = dsp.extent + 4
    if binding not in ("attractive", "repulsive"):
        raise ValidationError(f"binding must be attractive or repulsive, got {binding!r}")
    sign = 1.0 if binding == "attractive" else -1.0
    kappa = coupling_constant(eta, gamma, zeta)
    dist = build_mass_distribution(eta, gamma, G=1.0 / kappa, N=N)
    if b is None:
        # canonical strength 1/(Lambda_star*K), with K = (4+zeta)/c
        c = profile_constant(eta, gamma, zeta)
        b = c / (dist.lambda_star * (4.0 + zeta))
    pert = sign * b * dsp.field(N)
    prof = gamma_profile(dist, "geometric", zeta=zeta, perturbation=pert)
    return build_pd_distribution(dist, prof, zeta=zeta, pressure_mode="limit")


def rayleigh_quotients(op, dsp, edge):
    """Shifted Rayleigh quotients of the tent witnesses against ``edge``.

    Returns q_m = <X_m, (A - edge) X_m> / <X_m, X_m> for every block;
    q_m < 0 certifies an eigenvalue below the edge inside the well of
    block m.  The witnesses are constant-sign tents, the minimizing
    gauge for the lower band edge when the stored couplings are the
    negatives of the positive off-diagonal entries.
    """
    i0, n = op.i_start, op.n
    q = np.empty(dsp.m_max)
    for m in range(1, dsp.m_max + 1):
        s, L = dsp.blocks[m - 1]
        if s < i0 or s + L > i0 + n - 1:
            raise ValidationError(
                f"block {m} spans shells {s}..{s + L}, outside the section")
        i, t = dsp.tent(m)
        x = np.zeros(n)
        x[i - i0] = t
        q[m - 1] = float(x @ op.matvec(x)) / float(x @ x) - edge
    return q


@dataclass(frozen=True)
class EdgeModes:
    """Eigenvalues below the lower band edge and their mode profiles.

    Sorted ascending, so depths |E_m - edge| decrease along the
    detected ladder.  ``blocks`` holds the block of maximal mass per
    mode; ``in_block`` the mass fraction within that block +- 2 shells;
    ``dr_bounded`` the per-mode displacement verdicts.
    """

    edge: float
    values: np.ndarray = field(repr=False)
    blocks: np.ndarray = field(repr=False)
    in_block: np.ndarray = field(repr=False)
    dr_bounded: np.ndarray = field(repr=False)
    vectors: object = field(repr=False, default=None)

    @property
    def count(self):
        return int(self.values.size)

    @property
    def depths(self):
        return np.abs(self.values - self.edge)

    def ladder_fit(self, m_lo=1, indexing="block"):
        """Log-log slope and r**2 of depth against the ladder index.

        ``indexing="block"`` takes the deepest mode per assigned block
        and fits depth against the block index, matching the per-well
        depth bound; ``"detected"`` fits against position in the sorted
        sequence instead, which at finite truncation steepens the tail
        (the shallowest wells lose their modes to the boundary).
        """
        if indexing == "block":
            best = {}
            for v, m in zip(self.values, self.blocks):
                d = abs(v - self.edge)
                if m not in best or d > best[m]:
                    best[m] = d
            ms = np.array(sorted(best), dtype=float)
            depths = np.array([best[int(m)] for m in ms])
        elif indexing == "detected":
            depths = self.depths
            ms = np.arange(1, depths.size + 1, dtype=float)
        else:
            raise ValidationError(f"indexing must be block or detected, got {indexing!r}")
        keep = ms >= m_lo
        ms, depths = ms[keep], depths[keep]
        if ms.size < 3:
            raise ValidationError("need at least three modes to fit")
        lx, ly = np.log(ms), np.log(depths)
        A = np.vstack([lx, np.ones_like(lx)]).T
        coef, res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
        ss = float(np.sum((ly - ly.mean()) ** 2))
        r2 = 1.0 if ss == 0.0 or res.size == 0 else 1.0 - float(res[0]) / ss
        return float(coef[0]), r2


def detect_edge_eigenvalues(op, dsp, *, edge=None, window=None, tol=None,
                            threads=1, keep_vectors=False):
    """Find the modes in [edge - window, edge) and profile each one.

    ``edge`` defaults to the model's lower essential edge and ``window``
    to everything below it.  Each eigenvector is assigned to the block
    holding the largest share of its mass (fraction measured over the
    block widened by two shells) and its displacement field is judged
    bounded or not via delta_r_from_X.
    """
    if edge is None:
        edge = op.scaling.interval[0]
    glo, ghi = gershgorin_interval(op.diag, op.offdiag)
    span = max(ghi - glo, 1.0)
    if window is None:
        window = edge - glo + 1e-6 * span
    lo = edge - window
    hi = edge - 1e-9 * span
    vals = eigenvalues_bisect(op, window=(lo, hi), tol=tol, threads=threads)
    if vals.size == 0:
        empty = np.empty(0)
        return EdgeModes(edge=float(edge), values=vals,
                         blocks=np.empty(0, int), in_block=empty,
                         dr_bounded=np.empty(0, bool))

    vecs = eigenvectors_inverse_iteration(op.diag, op.offdiag, vals)
    shells = op.shells
    blocks = np.empty(vals.size, dtype=int)
    in_block = np.empty(vals.size)
    bounded = np.empty(vals.size, dtype=bool)
    for j in range(vals.size):
        x = vecs[:, j]
        m, frac = dsp.block_of(shells, x**2)
        blocks[j] = m
        in_block[j] = frac
        _, bounded[j] = delta_r_from_X(x, op.pd.dist, i_start=op.i_start)
    return EdgeModes(edge=float(edge), values=vals, blocks=blocks,
                     in_block=in_block, dr_bounded=bounded,
                     vectors=vecs if keep_vectors else None)
