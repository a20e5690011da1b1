"""Diagonal rescaling of stiff (non-decaying) profile operators.

For constant adiabatic exponents the couplings G3(I) grow like nu**-I
for a scaling base nu in (0, 1) set by the pressure power law (nu =
eta for the balanced case P*rho/M**2 ~ eta**-I), and the raw matrix is
useless beyond a thousand shells.  Conjugating by
H = diag(nu**floor(I/2)) tames it: with

    mu(I)   = nu**I * G3(I),
    beta(I) = nu**I * (4*Lambda_star - G2(I))
            = mu(I)*Rp(I) + nu*mu(I-1)*Rm(I) - t(I),
    t(I)    = 4*Lambda_star*nu**I * [ Mfrak(I)/(Mfrak_inf*(1-eta**I)**3) - 1 ],

the scaled matrix has O(1) couplings mu(I) and diagonal
4*Lambda_star*nu**(2*alpha(I)) - beta(I)*nu**(2*alpha(I)-I),
alpha(I) = floor(I/2), whose tail alternates between -beta/nu and
-beta.  The exact mechanism behind the scaling is the rational identity
checked by :func:`similarity_check`: conjugating a tridiagonal matrix
with geometrically graded entries by the diagonal built from the
mirrored exponent pattern strips the powers off both off-diagonals and
moves them onto the diagonal as (x*y)**-floor(j/2).

The same conjugation applied to the position-dependent-frequency
problem -W**2 X = A X, with omega(I)**2 = (-lam + beta(I)
* nu**(2*alpha(I)-I)) * nu**(-2*alpha(I)), absorbs the beta part of
the diagonal into the frequencies and leaves the plain eigenvalue
problem lam*Y = T*Y, where T keeps only the couplings mu(I) and the
vanishing diagonal 4*Lambda_star*nu**(2*alpha(I)).  Solutions of the
T system at interior lam are bounded and oscillatory, and the
displacement they induce, delta_r = nu**alpha * Y / sqrt(M), grows
geometrically: that is the divergence mechanism quantified by
:func:`delta_r_growth`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ValidationError
from .discrete import JacobiOperator, coupling_values
from .model import FOUR_PI


def diag_transform(x, y, n):
    """Entries d_1..d_n of the grading transform D(x, y).

    d_1 = 1, d_{2m} = prod_{k<=m} y**(2k-2)/x**(2k-1) and
    d_{2m+1} = prod_{k<=m} y**(2k-1)/x**(2k).  Works for any field
    elements (floats, Fractions); exponents grow quadratically, so exact
    rational inputs are the intended use beyond toy sizes.
    """
    if n < 1:
        raise ValidationError(f"need n >= 1, got {n}")
    one = x ** 0
    d = [one] * n
    even_val = one
    odd_val = one
    for j in range(2, n + 1):
        m = j // 2
        if j % 2 == 0:
            even_val = even_val * y ** (2 * m - 2) / x ** (2 * m - 1)
            d[j - 1] = even_val
        else:
            odd_val = odd_val * y ** (2 * m - 1) / x ** (2 * m)
            d[j - 1] = odd_val
    return d


@dataclass(frozen=True)
class TransformCheck:
    max_residual: object
    n: int
    exact: bool


def similarity_check(diag, sub, sup, x, y):
    """Verify the grading identity on one tridiagonal instance.

    Input: base sequences a_j (diagonal), b_j (sub-), c_j (super-) and
    grading factors x, y.  The graded matrix A has [A]_{j,j+1} = c_j*x**j
    and [A]_{j+1,j} = b_j*y**j.  The claim: B = D(y,x) A D(x,y) is again
    tridiagonal with [B]_{j,j+1} = c_j, [B]_{j+1,j} = b_j and
    [B]_{j,j} = a_j/(x*y)**floor(j/2).  Returns the largest residual
    entry; with Fraction inputs the identity is exact and the residual
    must be literally zero.
    """
    a = list(diag)
    b = list(sub)
    c = list(sup)
    n = len(a)
    if len(b) != n - 1 or len(c) != n - 1:
        raise ValidationError("need len(sub) == len(sup) == len(diag) - 1")
    if x == 0 or y == 0:
        raise ValidationError("grading factors must be nonzero")

    dl = diag_transform(y, x, n)
    dr = diag_transform(x, y, n)
    zero = (x - x)
    worst = zero
    exact = isinstance(x, Fraction) or isinstance(y, Fraction)

    for j in range(1, n):  # off-diagonal pairs (j, j+1), 1-based j
        b_sup = dl[j - 1] * (c[j - 1] * x ** j) * dr[j]
        b_sub = dl[j] * (b[j - 1] * y ** j) * dr[j - 1]
        r = abs(b_sup - c[j - 1])
        worst = r if r > worst else worst
        r = abs(b_sub - b[j - 1])
        worst = r if r > worst else worst
    for j in range(1, n + 1):
        b_dd = dl[j - 1] * a[j - 1] * dr[j - 1]
        r = abs(b_dd - a[j - 1] / (x * y) ** (j // 2))
        worst = r if r > worst else worst
    return TransformCheck(max_residual=worst, n=n, exact=exact and worst == 0)


@dataclass(frozen=True)
class ScaledSystem:
    """Scaled tridiagonal data mu(I), beta(I) for shells I = 1..n."""

    pd: object = field(repr=False)
    n: int
    mu: np.ndarray = field(repr=False)
    beta: np.ndarray = field(repr=False)
    t: np.ndarray = field(repr=False)
    diag: np.ndarray = field(repr=False)
    nu: float

    @property
    def eta(self):
        return self.pd.dist.eta

    @property
    def gamma(self):
        return self.pd.dist.gamma

    @property
    def theta(self):
        return 4.0 * self.pd.dist.lambda_star

    @property
    def alpha(self):
        return np.arange(1, self.n + 1) // 2

    @property
    def mu_inf(self):
        """Limit coupling; finite and nonzero only when the pressure is a
        power law and the scaling base absorbs it (nu = eta**-e3)."""
        pd = self.pd
        if pd.gamma.kind == "geometric":
            return 0.0
        if pd.pressure_mode == "polytrope":
            dist = pd.dist
            return (16.0 * math.pi**2 * pd.C_star * pd.gamma.c * dist.R_star**4
                    * dist.eta ** (-dist.gamma / 2.0))
        return math.nan

    @property
    def beta_inf(self):
        eta, gamma = self.eta, self.gamma
        return self.mu_inf * (eta ** (gamma / 2.0) + self.nu * eta ** (-gamma / 2.0))

    def operator(self):
        """n x n section of the scaled matrix (plain eigenproblem)."""
        return JacobiOperator(diag=self.diag.copy(), offdiag=-self.mu[:-1].copy(),
                              i_start=1, pd=None)

    def weighted_operator(self):
        """n x n section of the weighted-formulation matrix T.

        Conjugating -W**2 X = A X by H moves the beta part of the
        diagonal into the shell-local frequencies; what is left is the
        vanishing diagonal theta*nu**(2*alpha) with the couplings mu.
        Its essential spectrum is the single band
        [-2*mu_inf, 2*mu_inf].
        """
        diag = self.theta * self.nu ** (2.0 * self.alpha.astype(float))
        return JacobiOperator(diag=diag, offdiag=-self.mu[:-1].copy(),
                              i_start=1, pd=None)

    def limit_band_structure(self):
        """Band data of the 2-periodic tail comparison operator.

        The scaled matrix itself converges to the NEGATIVE of this
        pattern: its essential bands are the mirrored intervals
        [-e_plus, -e2] and [-e1, -e_minus].
        """
        from .spectra import band_structure
        return band_structure(self.beta_inf, self.mu_inf, self.nu)


def build_scaled_system(pd, n):
    """Compute mu(I), beta(I), t(I) and the scaled diagonal for I=1..n.

    All quantities are assembled from cancelled closed forms; no power of
    eta**I is ever formed for decaying factors that matter.  (For
    geometric adiabatic profiles mu(I) itself decays like eta**I and is
    allowed to underflow to its true limit 0.)
    """
    dist = pd.dist
    if n < 2 or n > dist.N - 1:
        raise ValidationError(f"need 2 <= n <= N-1, got n={n}")
    eta, gamma = dist.eta, dist.gamma
    idx = np.arange(1, n + 1)
    r = dist.radius

    if pd.gamma.kind == "geometric":
        nu = eta
    elif pd.pressure_mode == "polytrope":
        nu = eta ** (-pd.e3)
        if not 0.0 < nu < 1.0:
            raise ValidationError(
                f"scaling base nu = eta**-e3 must lie in (0, 1); "
                f"e3 = {pd.e3} gives nu = {nu}")
    else:
        nu = eta
    log_nu = math.log(nu)

    g3_scaled = (FOUR_PI * pd.gamma.scaled[idx] * pd.P_over_M[idx] * pd.mc[idx]
                 * r[idx + 1] ** 2 * eta ** (1.0 - gamma / 2.0)
                 / (dist.R_star * (1.0 - eta)))
    if pd.gamma.kind == "geometric":
        # g3_scaled is the O(1) cancelled coupling here; mu = nu**I * G3
        mu = g3_scaled * np.exp(idx * log_nu)
    else:
        # g3_scaled already equals eta**I * G3; rebase to nu**I * G3
        mu = g3_scaled * np.exp(idx * (log_nu - math.log(eta)))

    theta = 4.0 * dist.lambda_star
    # t(I) = nu**I * (4 G Mfrak(I)/r(I)**3 - theta), via exact mass fractions
    log_eta = math.log(eta)
    mfrac = -np.expm1(gamma * (idx + 1.0) * log_eta)
    rfrac = (-np.expm1(idx * log_eta)) ** 3
    t = theta * np.exp(idx * log_nu) * (mfrac / rfrac - 1.0)

    rp = (r[idx] / r[idx + 1]) ** 2 * eta ** (gamma / 2.0)
    rm = np.zeros(n)
    rm[1:] = (r[idx[1:]] / r[idx[1:] - 1]) ** 2 * eta ** (-gamma / 2.0)
    beta = mu * rp - t
    beta[1:] += nu * mu[:-1] * rm[1:]

    alpha = idx // 2
    diag = theta * np.exp(2.0 * alpha * log_nu) - beta * nu ** (2.0 * alpha - idx)
    return ScaledSystem(pd=pd, n=int(n), mu=mu, beta=beta, t=t, diag=diag,
                        nu=float(nu))


@dataclass(frozen=True)
class LocalFrequencies:
    shells: np.ndarray = field(repr=False)
    log_omega: np.ndarray = field(repr=False)

    def slope(self, tail=0.5):
        """Least-squares slope of log omega over the trailing fraction."""
        k0 = int(self.shells.size * (1.0 - tail))
        x = self.shells[k0:].astype(float)
        y = self.log_omega[k0:]
        A = np.vstack([x, np.ones_like(x)]).T
        coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
        return float(coef[0])


def local_frequencies(system, lam, i_min=1):
    """Shell-local frequencies omega(I) = sqrt(lam_I) * nu**-alpha(I).

    lam_I = -lam + beta(I)*nu**(2*alpha(I)-I) must be positive on the
    requested range; the innermost shells usually violate this (beta < 0
    there), in which case raise and report the deepest admissible start.
    """
    if not (1 <= i_min <= system.n):
        raise ValidationError(f"i_min out of range, got {i_min}")
    idx = np.arange(i_min, system.n + 1)
    alpha = idx // 2
    lam_i = -lam + system.beta[idx - 1] * system.nu ** (2.0 * alpha - idx)
    if np.any(lam_i <= 0.0):
        bad = idx[lam_i <= 0.0]
        raise ValidationError(
            f"lam_I <= 0 at {bad.size} shells starting at {int(bad[0])}; "
            f"evanescent region, try i_min >= {int(bad.max()) + 1}")
    log_omega = 0.5 * np.log(lam_i) - alpha * math.log(system.nu)
    return LocalFrequencies(shells=idx, log_omega=log_omega)


@dataclass(frozen=True)
class GrowthReport:
    """Envelope growth rates built on a weighted-formulation solution.

    ``solution_rate`` is the fitted log-growth per shell of the solution
    Y of lam*Y = T*Y; for lam in the open interior of the essential band
    [-2*mu_inf, 2*mu_inf] the solutions are bounded and oscillatory, so
    the theoretical value is 0.  ``displacement_rate`` adds the
    bookkeeping factors nu**alpha(I)/sqrt(M(I)) that turn Y into the
    relative displacement delta_r; bounded Y makes its envelope grow at
    exactly (gamma*ln(1/eta) - ln(1/nu))/2 per shell.
    """

    solution_rate: float
    displacement_rate: float
    theory_solution_rate: float
    theory_displacement_rate: float
    shells: np.ndarray = field(repr=False)
    log_abs_y: np.ndarray = field(repr=False)

    @property
    def solution_rate_error(self):
        return abs(self.solution_rate - self.theory_solution_rate)


def _envelope_fit(shells, log_abs, tail=0.5):
    """Slope of the running peaks of log|Y| over the trailing fraction."""
    k0 = int(shells.size * (1.0 - tail))
    x, y = shells[k0:].astype(float), log_abs[k0:]
    keep = np.isfinite(y)
    x, y = x[keep], y[keep]
    # local maxima of the oscillatory log-magnitude
    pk = np.where((y[1:-1] >= y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    if pk.size < 4:
        pk = np.arange(y.size)
    A = np.vstack([x[pk], np.ones(pk.size)]).T
    coef, _, _, _ = np.linalg.lstsq(A, y[pk], rcond=None)
    return float(coef[0])


def delta_r_growth(system, lam=0.0, *, Y=None, i_min=1, seed=(0.0, 1.0),
                   tail=0.5):
    """Fit the envelope growth of delta_r = nu**alpha * Y / sqrt(M).

    Y is a tail solution of the weighted-formulation recurrence
    mu(I-1)Y(I-1) + mu(I)Y(I+1) = (theta*nu**(2*alpha) - lam)Y(I) on
    shells i_min..n, solved here from ``seed`` = (Y(i_min-1), Y(i_min))
    unless an explicit array is passed.  Y is renormalized on the fly,
    only log-magnitudes are kept, so lam outside the essential band
    (exponentially growing solutions) is handled too.
    """
    n = system.n
    if not (1 <= i_min <= n - 8):
        raise ValidationError(f"i_min leaves too short a range, got {i_min}")
    nu = system.nu
    idx = np.arange(i_min, n + 1)
    alpha = idx // 2
    mu = system.mu
    log_abs = np.empty(idx.size)

    if Y is not None:
        Y = np.asarray(Y, dtype=float)
        if Y.shape != idx.shape:
            raise ValidationError(
                f"Y must cover shells {i_min}..{n} ({idx.size} values), "
                f"got shape {Y.shape}")
        with np.errstate(divide="ignore"):
            log_abs = np.log(np.abs(Y))
    else:
        if np.any(mu[i_min - 1:n - 1] == 0.0):
            raise ValidationError(
                "couplings mu underflow to zero on the requested range; "
                "the weighted tail solve needs a non-decaying profile")
        rhs = system.theta * np.exp(2.0 * alpha * math.log(nu)) - lam
        y_prev, y_cur = float(seed[0]), float(seed[1])
        if y_prev == 0.0 and y_cur == 0.0:
            raise ValidationError("seed must not be identically zero")
        log_scale = 0.0
        with np.errstate(divide="ignore"):
            log_abs[0] = math.log(abs(y_cur)) if y_cur != 0.0 else -math.inf
        for k in range(idx.size - 1):
            i = int(idx[k])
            y_next = (rhs[k] * y_cur - (mu[i - 2] if i >= 2 else 0.0) * y_prev) / mu[i - 1]
            y_prev, y_cur = y_cur, y_next
            m = max(abs(y_prev), abs(y_cur))
            if m > 1e250:
                y_prev /= m
                y_cur /= m
                log_scale += math.log(m)
            log_abs[k + 1] = (log_scale + math.log(abs(y_cur))) if y_cur != 0.0 else -math.inf

    sol_rate = _envelope_fit(idx, log_abs, tail)
    gamma = system.gamma
    disp_step = 0.5 * (gamma * math.log(1.0 / system.eta) - math.log(1.0 / nu))
    disp = log_abs + alpha * math.log(nu) - 0.5 * system.pd.dist.log_shell_mass(idx)
    disp_rate = _envelope_fit(idx, disp, tail)
    return GrowthReport(solution_rate=sol_rate, displacement_rate=disp_rate,
                        theory_solution_rate=0.0,
                        theory_displacement_rate=disp_step,
                        shells=idx, log_abs_y=log_abs)
