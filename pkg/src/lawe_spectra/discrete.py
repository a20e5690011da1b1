"""Assembly and spectral classification of the shell oscillation operator.

The linearized adiabatic oscillations of a shell model reduce to an
infinite symmetric Jacobi matrix acting on mass-weighted displacements
X(I) = sqrt(M(I)) * dr(I).  Row I reads

    -G3(I-1) X(I-1) + G2(I) X(I) - G3(I) X(I+1) = lambda X(I),

with the coupling

    G3(I) = 4*pi*Gamma(I)*(P/M)(I)*mc(I)*r(I+1)**2 * eta**(-gamma/2) / width(I)

and the diagonal

    G2(I) = 4*G*Mfrak(I)/r(I)**3 - G3(I)*Rp(I) - G3(I-1)*Rm(I),
    Rp(I) = (r(I)/r(I+1))**2 * eta**(gamma/2),
    Rm(I) = (r(I)/r(I-1))**2 * eta**(-gamma/2).

The lower-neighbour terms are absent at I = 1 (the core is a point).
For decaying adiabatic profiles Gamma(I) = Gs(I)*eta**I the eta powers
cancel against the shell widths, G3(I) = 4*pi*Gs(I)*(P/M)(I)*mc(I)
* r(I+1)**2 * eta**(1-gamma/2) / (R_star*(1-eta)), so entries stay O(1)
however deep the truncation; the assembly below always uses the
cancelled forms.  sqrt(M(I)/M(I+1)) = eta**(-gamma/2) is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .model import FOUR_PI, scaling_params

#: ordering of coefficient-convergence classes, weakest first
CONVERGENCE_ORDER = ("none", "limit_only", "l2", "l1", "l1_weighted")


@dataclass(frozen=True)
class JacobiOperator:
    """Finite section of the infinite oscillation matrix.

    ``diag[k]`` and ``offdiag[k]`` hold G2(I) and -G3(I) for shells
    I = i_start + k; the section is the principal submatrix on shells
    i_start .. i_start+n-1 with Dirichlet truncation on both sides.
    """

    diag: np.ndarray = field(repr=False)
    offdiag: np.ndarray = field(repr=False)
    i_start: int
    pd: object = field(repr=False, default=None, compare=False)

    @property
    def n(self):
        return self.diag.shape[0]

    @property
    def shells(self):
        return np.arange(self.i_start, self.i_start + self.n)

    @property
    def scaling(self):
        if self.pd is None:
            raise ValidationError("operator carries no model data")
        return scaling_params(self.pd.dist, self.pd.zeta)

    def matvec(self, x):
        y = self.diag * x
        y[:-1] += self.offdiag * x[1:]
        y[1:] += self.offdiag * x[:-1]
        return y

    def gauge_flipped(self):
        """Unitarily equivalent copy with positive couplings.

        Conjugation by diag((-1)**I) flips the off-diagonal sign and
        leaves the spectrum untouched.
        """
        return JacobiOperator(diag=self.diag, offdiag=-self.offdiag,
                              i_start=self.i_start, pd=self.pd)


def coupling_values(pd, i_lo, i_hi):
    """G3(I) for I = i_lo..i_hi inclusive, in the cancelled scale-free form."""
    dist = pd.dist
    if i_lo < 1 or i_hi > dist.N - 1:
        raise ValidationError(
            f"couplings need 1 <= I <= N-1 = {dist.N - 1}, got [{i_lo}, {i_hi}]")
    idx = np.arange(i_lo, i_hi + 1)
    eta, gamma = dist.eta, dist.gamma
    common = FOUR_PI * pd.gamma.scaled[idx] * pd.P_over_M[idx] * pd.mc[idx] * dist.radius[idx + 1] ** 2
    if pd.gamma.kind == "geometric":
        return common * eta ** (1.0 - gamma / 2.0) / (dist.R_star * (1.0 - eta))
    # constant profile: keep the raw 1/width, which grows like eta**-I
    return common * eta ** (-gamma / 2.0) / dist.width[idx]


def assemble_jacobi(pd, n, i_start=1):
    """Assemble the n x n section of the oscillation matrix on shells
    i_start .. i_start+n-1.

    ``i_start > 1`` drops the innermost shells together with their large
    gravity diagonal; the section is still a principal submatrix of the
    same infinite matrix, so its eigenvalues interlace those of deeper
    truncations.
    """
    dist = pd.dist
    if n < 2:
        raise ValidationError(f"need n >= 2, got {n}")
    if i_start < 1:
        raise ValidationError(f"i_start must be >= 1, got {i_start}")
    i_top = i_start + n - 1
    if i_top > dist.N - 1:
        raise ValidationError(
            f"section reaches shell {i_top}, model has couplings up to {dist.N - 1}")

    g3_lo = i_start if i_start == 1 else i_start - 1
    g3 = coupling_values(pd, g3_lo, i_top)

    idx = np.arange(i_start, i_top + 1)
    r = dist.radius
    eta, gamma = dist.eta, dist.gamma
    grav = 4.0 * dist.G * dist.enclosed_mass[idx] / r[idx] ** 3
    rp = (r[idx] / r[idx + 1]) ** 2 * eta ** (gamma / 2.0)
    rm = np.empty(n)
    rm[0] = 0.0 if i_start == 1 else (r[i_start] / r[i_start - 1]) ** 2 * eta ** (-gamma / 2.0)
    rm[1:] = (r[idx[1:]] / r[idx[1:] - 1]) ** 2 * eta ** (-gamma / 2.0)

    off = i_start - g3_lo  # 0 when the core term is dropped, 1 otherwise
    g3_here = g3[off : off + n]
    g3_below = np.empty(n)
    g3_below[0] = g3[0] if off == 1 else 0.0
    g3_below[1:] = g3_here[:-1]

    diag = grav - g3_here * rp - g3_below * rm
    offdiag = -g3_here[:-1]
    return JacobiOperator(diag=diag, offdiag=offdiag, i_start=int(i_start), pd=pd)


@dataclass(frozen=True)
class TailClass:
    """Fitted decay class of a coefficient sequence.

    mode
        One of ``CONVERGENCE_ORDER``: which weighted sums of the
        residuals converge.  "l1_weighted" also covers geometric decay.
    kind
        "exact", "geometric" or "power" depending on the winning fit.
    rate
        Decay ratio per step (geometric) or power-law exponent s.
    """

    mode: str
    kind: str
    rate: float
    limit: float
    r_squared: float


def _aitken_limit(a):
    d1 = a[1:-1] - a[:-2]
    d2 = a[2:] - 2.0 * a[1:-1] + a[:-2]
    ok = np.abs(d2) > 1e-300
    if not np.any(ok):
        return float(a[-1])
    est = a[:-2][ok] - d1[ok] ** 2 / d2[ok]
    return float(np.median(est[-8:]))


def classify_tail(seq, limit=None, margin=0.01):
    """Classify how fast ``seq`` approaches its limit.

    Fits both a geometric and a power-law model to the residuals over the
    last half of the sequence and keeps the better one.  For a power law
    |a_k - limit| ~ k**-s the summability thresholds are s > 2, 1, 1/2
    for the weighted-l1, l1 and l2 classes, each taken with a safety
    ``margin``.  Geometric decay lands in the strongest class.
    """
    a = np.asarray(seq, dtype=float)
    if a.ndim != 1 or a.size < 16:
        raise ValidationError("need a 1-d sequence with at least 16 entries")
    if limit is None:
        limit = _aitken_limit(a[-max(12, a.size // 4):])
    limit = float(limit)

    k0 = a.size // 2
    k = np.arange(k0, a.size, dtype=float) + 1.0
    d = np.abs(a[k0:] - limit)
    # rounding from log-space assembly accumulates ~ linearly in the index
    floor = (1e-15 + 4e-16 * k) * max(1.0, float(np.max(np.abs(a)))) + 1e-300
    live = d > floor
    if np.count_nonzero(live) < 8:
        return TailClass(mode="l1_weighted", kind="exact", rate=math.inf,
                         limit=limit, r_squared=1.0)

    k, ld = k[live], np.log(d[live])

    def _linfit(x, y):
        A = np.vstack([x, np.ones_like(x)]).T
        coef, res, _, _ = np.linalg.lstsq(A, y, rcond=None)
        ss = float(np.sum((y - y.mean()) ** 2))
        if ss == 0.0 or res.size == 0:
            return coef[0], 1.0
        return coef[0], 1.0 - float(res[0]) / ss

    slope_g, r2_g = _linfit(k, ld)
    slope_p, r2_p = _linfit(np.log(k), ld)

    if r2_g >= r2_p and slope_g < 0.0:
        # geometric: every polynomially weighted sum converges
        return TailClass(mode="l1_weighted", kind="geometric",
                         rate=float(np.exp(slope_g)), limit=limit, r_squared=r2_g)
    s = -slope_p
    if s > 2.0 + margin:
        mode = "l1_weighted"
    elif s > 1.0 + margin:
        mode = "l1"
    elif s > 0.5 + margin:
        mode = "l2"
    elif s > margin:
        mode = "limit_only"
    else:
        mode = "none"
    return TailClass(mode=mode, kind="power", rate=float(s), limit=limit, r_squared=r2_p)


@dataclass(frozen=True)
class SpectrumPrediction:
    """What the coefficient tails imply for the infinite operator."""

    interval: tuple
    mode: str
    diag_class: TailClass
    offdiag_class: TailClass

    @property
    def essential_interval_known(self):
        return self.mode != "none"

    @property
    def finite_outside_moment(self):
        """Sum of (distance to interval)**(3/2) over outside eigenvalues is finite."""
        return CONVERGENCE_ORDER.index(self.mode) >= CONVERGENCE_ORDER.index("l2")

    @property
    def ac_fills_interval(self):
        return CONVERGENCE_ORDER.index(self.mode) >= CONVERGENCE_ORDER.index("l1")

    @property
    def no_eigenvalues_inside(self):
        return self.ac_fills_interval

    @property
    def edges_not_eigenvalues(self):
        return self.mode == "l1_weighted"


def predict_spectrum(op, margin=0.01):
    """Classify the coefficient tails of ``op`` and fold in the nesting
    of spectral conclusions (stronger decay, stronger statement)."""
    sp = op.scaling
    z, c = sp.centre, sp.kappa * sp.lambda_star
    diag_class = classify_tail(op.diag, limit=z, margin=margin)
    offdiag_class = classify_tail(np.abs(op.offdiag), limit=c, margin=margin)
    mode = min(diag_class.mode, offdiag_class.mode, key=CONVERGENCE_ORDER.index)
    return SpectrumPrediction(interval=sp.interval, mode=mode,
                              diag_class=diag_class, offdiag_class=offdiag_class)


def delta_r_log(X, pd, i_start=1):
    """ln |dr(I)| for a coefficient vector X on shells starting at i_start.

    dr(I) = X(I)/sqrt(M(I)); computed in log space because the shell
    masses underflow long before typical truncation depths.  Entries
    where X vanishes give -inf.
    """
    X = np.asarray(X, dtype=float)
    idx = np.arange(i_start, i_start + X.shape[0])
    with np.errstate(divide="ignore"):
        return np.log(np.abs(X)) - 0.5 * pd.dist.log_shell_mass(idx)


def delta_r_from_X(X, dist, i_start=1, floor=1e-13, tol=1e-6):
    """Displacement field dr(I) = X(I)/sqrt(M(I)) and a boundedness verdict.

    The verdict looks only at shells where |X| exceeds floor*max|X|:
    below that an eigenvector out of inverse iteration is roundoff, and
    dividing roundoff by the vanishing shell masses manufactures fake
    growth.  Within that range the sup of |dr| must be attained before
    the last quartile and not be exceeded inside it.  The returned
    field itself is unguarded, so entries can overflow to inf where X
    decays slower than sqrt(M).
    """
    X = np.asarray(X, dtype=float)
    idx = np.arange(i_start, i_start + X.shape[0])
    with np.errstate(divide="ignore"):
        log_dr = np.log(np.abs(X)) - 0.5 * dist.log_shell_mass(idx)
    with np.errstate(over="ignore"):
        dr = np.sign(X) * np.exp(log_dr)
    amax = float(np.max(np.abs(X)))
    if amax == 0.0:
        return dr, True
    stop = int(np.where(np.abs(X) > floor * amax)[0][-1]) + 1
    y = log_dr[:stop]
    y = y[np.isfinite(y)]
    k = max(1, (3 * y.size) // 4)
    early = float(np.max(y[:k]))
    late = float(np.max(y[k:])) if y.size > k else -np.inf
    bounded = late <= early + tol * max(1.0, abs(early))
    return dr, bool(bounded)
