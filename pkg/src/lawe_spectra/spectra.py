"""Spectra of truncated sections: bisection eigensolver and diagnostics.

The solver is a vectorized Sturm-sequence bisection; it needs only the
two diagonals, handles windowed queries without computing the full
spectrum, and is immune to the element-growth issues of QR-type sweeps
on strongly graded matrices.  Eigenvectors come from inverse iteration
with a banded LU solve.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import NumericalError, ValidationError
from .discrete import JacobiOperator


def _as_diagonals(op_or_diag, offdiag=None):
    if offdiag is None:
        return np.asarray(op_or_diag.diag, float), np.asarray(op_or_diag.offdiag, float)
    return np.asarray(op_or_diag, float), np.asarray(offdiag, float)


def gershgorin_interval(diag, offdiag):
    r = np.zeros(diag.shape[0])
    r[:-1] += np.abs(offdiag)
    r[1:] += np.abs(offdiag)
    return float(np.min(diag - r)), float(np.max(diag + r))


def sturm_counts(diag, off2, shifts, threads=1):
    """Number of eigenvalues strictly below each shift.

    Standard Sturm recurrence q <- (d_i - x) - e_{i-1}**2 / q with the
    LAPACK-style pivot floor: near-zero pivots are replaced by -pivmin so
    the sign count stays well defined.
    """
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    if threads > 1 and shifts.size >= 4 * threads:
        chunks = np.array_split(shifts, threads)
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda s: sturm_counts(diag, off2, s), chunks))
        return np.concatenate(parts)

    pivmin = 1e-290 * max(1.0, float(np.max(off2)) if off2.size else 1.0)
    # floor each pivot before counting: an exact-zero pivot must count as
    # negative or shifts that annihilate a pivot (zero diagonals, rational
    # midpoints) undercount by one and bisection locks onto the wrong index
    q = diag[0] - shifts
    np.copyto(q, -pivmin, where=np.abs(q) <= pivmin)
    count = (q < 0.0).astype(np.int64)
    for i in range(1, diag.shape[0]):
        q = (diag[i] - shifts) - off2[i - 1] / q
        np.copyto(q, -pivmin, where=np.abs(q) <= pivmin)
        count += q < 0.0
    return count


def eigenvalues_bisect(op_or_diag, offdiag=None, *, window=None, indices=None,
                       tol=None, threads=1, max_rounds=120):
    """Eigenvalues of a symmetric tridiagonal section by index bisection.

    window=(a, b]
        Return the eigenvalues in the half-open interval.
    indices=(k_lo, k_hi)
        Return eigenvalues k_lo..k_hi inclusive (0-based, ascending).

    All requested eigenvalues are bisected simultaneously, one Sturm count
    per round over the vector of active midpoints.
    """
    diag, off = _as_diagonals(op_or_diag, offdiag)
    n = diag.shape[0]
    off2 = off * off
    glo, ghi = gershgorin_interval(diag, off)
    span = max(ghi - glo, 1e-30)
    glo, ghi = glo - 1e-12 * span, ghi + 1e-12 * span
    if tol is None:
        tol = 1e-10 * span

    if window is not None and indices is not None:
        raise ValidationError("pass either window or indices, not both")
    b_lo, b_hi = glo, ghi
    if window is not None:
        a, b = window
        if not a < b:
            raise ValidationError(f"empty window {window!r}")
        c = sturm_counts(diag, off2, np.array([a, b]), threads)
        k_lo, k_hi = int(c[0]), int(c[1]) - 1
        b_lo, b_hi = a, b
    elif indices is not None:
        k_lo, k_hi = int(indices[0]), int(indices[1])
        if not (0 <= k_lo <= k_hi < n):
            raise ValidationError(f"indices out of range for n={n}: {indices!r}")
    else:
        k_lo, k_hi = 0, n - 1
    m = k_hi - k_lo + 1
    if m <= 0:
        return np.empty(0)

    ks = np.arange(k_lo, k_hi + 1)
    lo = np.full(m, b_lo)
    hi = np.full(m, b_hi)
    for _ in range(max_rounds):
        live = (hi - lo) > tol
        if not np.any(live):
            break
        mid = 0.5 * (lo[live] + hi[live])
        cnt = sturm_counts(diag, off2, mid, threads)
        go_up = cnt <= ks[live]
        lo_live = lo[live]
        hi_live = hi[live]
        lo_live[go_up] = mid[go_up]
        hi_live[~go_up] = mid[~go_up]
        lo[live] = lo_live
        hi[live] = hi_live
    else:
        raise NumericalError("bisection failed to converge; tol too small?")
    return 0.5 * (lo + hi)


def eigenvectors_inverse_iteration(diag, offdiag, values, *, iters=3, seed=7,
                                   residual_factor=1e-8):
    """Eigenvectors by inverse iteration with a banded LU solve.

    Eigenvalues closer than 1e-8 of the spectral span are treated as a
    cluster and re-orthogonalized every sweep.  Raises NumericalError if
    a residual ||A v - lambda v|| exceeds residual_factor times the span.
    """
    diag = np.asarray(diag, float)
    off = np.asarray(offdiag, float)
    values = np.atleast_1d(np.asarray(values, float))
    n = diag.shape[0]
    glo, ghi = gershgorin_interval(diag, off)
    span = max(ghi - glo, 1e-30)
    rng = np.random.default_rng(seed)
    vecs = np.empty((n, values.size))

    order = np.argsort(values)
    cluster_tol = 1e-8 * span
    groups, cur = [], [order[0]] if values.size else []
    for j in order[1:]:
        if values[j] - values[cur[-1]] <= cluster_tol:
            cur.append(j)
        else:
            groups.append(cur)
            cur = [j]
    if cur:
        groups.append(cur)

    ab = np.zeros((3, n))
    for group in groups:
        block = np.empty((n, len(group)))
        for pos, j in enumerate(group):
            lam = values[j] + (pos - len(group) / 2) * 1e-3 * cluster_tol
            shift = 1e-13 * span
            for attempt in range(4):
                ab[0, 1:] = off
                ab[1, :] = diag - (lam + shift)
                ab[2, :-1] = off
                v = rng.standard_normal(n)
                try:
                    for _ in range(iters):
                        v = solve_banded((1, 1), ab, v,
                                         overwrite_ab=False, check_finite=False)
                        nv = float(np.linalg.norm(v))
                        if not math.isfinite(nv) or nv == 0.0:
                            raise np.linalg.LinAlgError
                        v /= nv
                    break
                except np.linalg.LinAlgError:
                    shift *= 37.0
            block[:, pos] = v
        # re-orthogonalize degenerate directions
        if len(group) > 1:
            block, _ = np.linalg.qr(block)
        for pos, j in enumerate(group):
            vecs[:, j] = block[:, pos]

    # residual check against the requested values
    for j in range(values.size):
        v = vecs[:, j]
        av = diag * v
        av[:-1] += off * v[1:]
        av[1:] += off * v[:-1]
        res = float(np.linalg.norm(av - values[j] * v))
        if res > residual_factor * span:
            raise NumericalError(
                f"inverse iteration residual {res:.3e} exceeds "
                f"{residual_factor:.1e} * span for eigenvalue {values[j]!r}")
    return vecs


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray = field(repr=False)
    vectors: object = field(repr=False, default=None)

    @property
    def count(self):
        return int(self.values.size)


def truncation_eigenvalues(op, *, window=None, indices=None, tol=None,
                           vectors=False, threads=1):
    """Windowed or full spectrum of a :class:`JacobiOperator` section."""
    vals = eigenvalues_bisect(op, window=window, indices=indices,
                              tol=tol, threads=threads)
    vecs = None
    if vectors and vals.size:
        vecs = eigenvectors_inverse_iteration(op.diag, op.offdiag, vals)
    return EigenResult(values=vals, vectors=vecs)


@dataclass(frozen=True)
class FillReport:
    """How the section eigenvalues cover a target interval."""

    interval: tuple
    pad: float
    values: np.ndarray = field(repr=False)
    max_gap: float = np.nan
    n_inside: int = 0
    n_outliers: int = 0
    outliers: np.ndarray = field(repr=False, default=None)

    @property
    def fills(self):
        return self.n_outliers == 0 and self.max_gap < self.pad


def spectrum_fill_report(op, interval=None, *, pad=0.05, tol=None, threads=1):
    """Full spectrum of the section and its coverage of ``interval``.

    The maximal gap is measured between consecutive eigenvalues inside
    the interval, including the distances from the interval endpoints to
    the nearest eigenvalue; outliers are eigenvalues farther than ``pad``
    outside.
    """
    if interval is None:
        interval = op.scaling.interval
    lo, hi = float(interval[0]), float(interval[1])
    vals = eigenvalues_bisect(op, tol=tol, threads=threads)
    inside = vals[(vals >= lo - pad) & (vals <= hi + pad)]
    outliers = vals[(vals < lo - pad) | (vals > hi + pad)]
    knots = np.concatenate([[lo], np.sort(np.clip(inside, lo, hi)), [hi]])
    max_gap = float(np.max(np.diff(knots))) if inside.size else hi - lo
    return FillReport(interval=(lo, hi), pad=float(pad), values=vals,
                      max_gap=max_gap, n_inside=int(inside.size),
                      n_outliers=int(outliers.size), outliers=outliers)


@dataclass(frozen=True)
class JostFit:
    """Measured free-wave behaviour of a tail solution at energy lam."""

    lam: float
    theta: float
    theta_fit: float
    amplitude_flatness: float
    phase_residual: float
    n_peaks: int

    @property
    def theta_error(self):
        return abs(self.theta_fit - self.theta)


def jost_verify(op, lam, *, fit_start=None, fit_stop=None):
    """Propagate a complex tail solution and compare it to e^{i*theta*I}.

    In the tail the three-term recurrence has constant limits (centre z,
    coupling c), so interior energies lam = z + 2*c*cos(theta) admit
    bounded oscillatory solutions.  The recurrence is seeded with the
    plane-wave pair (1, e^{i*theta}) and run forward; over the fit window
    the envelope peaks of |X| must be flat and the unwrapped phase must
    advance by theta per shell, up to the (geometrically decaying)
    coefficient transients.
    """
    sp = op.scaling
    z = sp.centre
    c = sp.kappa * sp.lambda_star
    x = (lam - z) / (2.0 * c)
    if not abs(x) < 1.0 - 1e-9:
        raise ValidationError(f"lam={lam!r} is not interior to {sp.interval}")
    theta = math.acos(x)

    d = op.diag
    e = np.abs(op.offdiag)  # gauge with positive couplings
    n = op.n
    X = np.empty(n, dtype=complex)
    X[0] = 1.0
    X[1] = complex(math.cos(theta), math.sin(theta))
    for k in range(1, n - 1):
        X[k + 1] = ((lam - d[k]) * X[k] - e[k - 1] * X[k - 1]) / e[k]

    if fit_start is None:
        fit_start = n // 4
    if fit_stop is None:
        fit_stop = n
    if not (0 <= fit_start < fit_stop - 8 <= n - 8):
        raise ValidationError("fit window too small")
    w = np.abs(X[fit_start:fit_stop])

    interior = (w[1:-1] >= w[:-2]) & (w[1:-1] >= w[2:])
    peaks = w[1:-1][interior]
    if peaks.size < 3:
        peaks = w  # theta near 0 or pi: period exceeds the window
    flat = float((np.max(peaks) - np.min(peaks)) / np.mean(peaks))

    phi = np.unwrap(np.angle(X[fit_start:fit_stop]))
    kk = np.arange(phi.size, dtype=float)
    A = np.vstack([kk, np.ones_like(kk)]).T
    coef, _, _, _ = np.linalg.lstsq(A, phi, rcond=None)
    slope = float(coef[0])
    resid = float(np.sqrt(np.mean((phi - A @ coef) ** 2)))
    return JostFit(lam=float(lam), theta=theta, theta_fit=abs(slope),
                   amplitude_flatness=flat, phase_residual=resid,
                   n_peaks=int(peaks.size))


@dataclass(frozen=True)
class BandStructure:
    """Spectral bands of the 2-periodic operator with diagonal
    (beta/eta, beta, ...) and constant coupling mu."""

    beta: float
    mu: float
    eta: float
    e_minus: float
    e1: float
    e2: float
    e_plus: float

    @property
    def bands(self):
        return ((self.e_minus, self.e1), (self.e2, self.e_plus))

    @property
    def gap(self):
        return (self.e1, self.e2)

    def distance(self, x):
        """Distance from x to the union of the two bands (0 inside)."""
        x = np.asarray(x, dtype=float)
        d = np.full(x.shape, np.inf)
        for lo, hi in self.bands:
            d = np.minimum(d, np.maximum.reduce([lo - x, x - hi, np.zeros_like(x)]))
        return d


def band_structure(beta, mu, eta):
    """Closed-form band edges of the 2-periodic limit operator.

    The discriminant of the period-2 transfer matrix gives the outer
    edges (beta*(1+eta) +- sqrt(16*eta**2*mu**2 + beta**2*(1-eta)**2))
    / (2*eta); the inner edges are the diagonal values beta and beta/eta.
    """
    if not (0.0 < eta < 1.0):
        raise ValidationError(f"eta must lie in (0, 1), got {eta!r}")
    if beta <= 0.0 or mu == 0.0:
        raise ValidationError("need beta > 0 and mu != 0")
    disc = math.sqrt(16.0 * eta**2 * mu**2 + beta**2 * (1.0 - eta) ** 2)
    e_minus = (beta * (1.0 + eta) - disc) / (2.0 * eta)
    e_plus = (beta * (1.0 + eta) + disc) / (2.0 * eta)
    return BandStructure(beta=float(beta), mu=float(mu), eta=float(eta),
                         e_minus=e_minus, e1=float(beta), e2=float(beta / eta),
                         e_plus=e_plus)


def build_two_periodic(beta, mu, eta, n, i_start=1):
    """Finite section of the 2-periodic comparison operator.

    Shell I carries diagonal beta/eta for odd I and beta for even I, with
    constant coupling mu; ``i_start`` fixes the parity of the first row.
    """
    band_structure(beta, mu, eta)  # parameter validation only
    idx = np.arange(i_start, i_start + n)
    diag = np.where(idx % 2 == 1, beta / eta, beta).astype(float)
    offdiag = np.full(n - 1, float(mu))
    return JacobiOperator(diag=diag, offdiag=offdiag, i_start=int(i_start), pd=None)


@dataclass(frozen=True)
class BandReport:
    n_values: int
    n_off_band: int
    n_gap_interior: int
    max_band_distance: float


def band_report(values, bs, *, pad=0.05, gap_margin=0.05):
    """Count section eigenvalues against the limit bands.

    Dirichlet truncation may shed a handful of states into the spectral
    gap; ``n_gap_interior`` counts those farther than ``gap_margin`` from
    either inner edge, ``n_off_band`` those farther than ``pad`` from the
    band union.
    """
    values = np.asarray(values, dtype=float)
    dist = bs.distance(values)
    g_lo, g_hi = bs.gap
    in_gap = (values > g_lo + gap_margin) & (values < g_hi - gap_margin)
    return BandReport(n_values=int(values.size),
                      n_off_band=int(np.count_nonzero(dist > pad)),
                      n_gap_interior=int(np.count_nonzero(in_gap)),
                      max_band_distance=float(np.max(dist)) if values.size else 0.0)
