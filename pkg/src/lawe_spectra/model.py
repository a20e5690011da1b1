"""Geometric shell models of a stellar envelope.

A model is an infinite sequence of concentric shells accumulating at the
stellar surface.  Shell I >= 1 occupies the radial interval
[r(I-1), r(I)] with

    r(I)     = R_star * (1 - eta**I),          0 < eta < 1,
    M(I)     = M_star * (1 - eta**gamma) * eta**(gamma*I),

and index 0 is a formal point core at the centre carrying the remaining
mass, so that the enclosed masses

    Mfrak(I) = sum_{J<=I} M(J) = M_star * (1 - eta**(gamma*(I+1)))

are exact partial geometric sums.  Widths never come from subtraction:
r(I) - r(I-1) = R_star * eta**(I-1) * (1 - eta) holds in closed form.

On top of the mass distribution sit an adiabatic-exponent profile and a
pressure law; together they fix the coefficients of the oscillation
operator assembled in ``discrete``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

FOUR_PI = 4.0 * math.pi


def _check_positive(name, value):
    if not (value > 0.0) or not math.isfinite(value):
        raise ValidationError(f"{name} must be positive and finite, got {value!r}")


@dataclass(frozen=True)
class MassDistribution:
    """Shell masses, radii and enclosed masses for a geometric envelope.

    Arrays are indexed by shell number I = 0..N.  Index 0 holds the formal
    core: radius 0, the central point mass, zero width and an undefined
    (nan) density.  Beyond I ~ 500 the raw shell masses underflow to zero
    in double precision; use :meth:`log_shell_mass` and friends, or the
    scale-free ratios, whenever the absolute values matter.
    """

    eta: float
    gamma: float
    M_star: float
    R_star: float
    G: float
    N: int
    radius: np.ndarray = field(repr=False)
    width: np.ndarray = field(repr=False)
    shell_mass: np.ndarray = field(repr=False)
    enclosed_mass: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)

    @property
    def lambda_star(self):
        """Characteristic squared frequency G*M_star/R_star**3."""
        return self.G * self.M_star / self.R_star**3

    @property
    def mass_ratio(self):
        """Exact ratio M(I)/M(I+1) = eta**-gamma of consecutive shells."""
        return self.eta ** (-self.gamma)

    def log_shell_mass(self, i):
        """ln M(i), exact for any index (no underflow)."""
        i = np.asarray(i, dtype=float)
        return math.log(self.M_star * (1.0 - self.eta**self.gamma)) + self.gamma * i * math.log(self.eta)

    def log_width(self, i):
        """ln width(i) for i >= 1, exact for any index."""
        i = np.asarray(i, dtype=float)
        return math.log(self.R_star * (1.0 - self.eta)) + (i - 1.0) * math.log(self.eta)

    def log_rho(self, i):
        """ln rho(i) for i >= 1, exact for any index."""
        i = np.asarray(i, dtype=float)
        log_r2 = 2.0 * (math.log(self.R_star) + np.log1p(-self.eta**i))
        return self.log_shell_mass(i) - math.log(FOUR_PI) - log_r2 - self.log_width(i)


def build_mass_distribution(eta, gamma, *, M_star=1.0, R_star=1.0, G=1.0, N=64):
    """Construct a :class:`MassDistribution` for shells I = 0..N.

    Parameters
    ----------
    eta : float
        Geometric radius ratio, 0 < eta < 1.  Radii accumulate at R_star
        like R_star*(1 - eta**I).
    gamma : float
        Mass-decay exponent; shell masses fall off like eta**(gamma*I).
    M_star, R_star, G : float
        Total mass, surface radius and gravitational constant.
    N : int
        Largest shell index to materialize.
    """
    if not (0.0 < eta < 1.0):
        raise ValidationError(f"eta must lie in (0,1), got {eta!r}")
    _check_positive("gamma", gamma)
    _check_positive("M_star", M_star)
    _check_positive("R_star", R_star)
    _check_positive("G", G)
    if int(N) != N or N < 2:
        raise ValidationError(f"N must be an integer >= 2, got {N!r}")
    N = int(N)

    idx = np.arange(N + 1, dtype=float)
    radius = R_star * (-np.expm1(idx * math.log(eta)))  # R*(1 - eta^I), accurate near the surface
    width = np.empty(N + 1)
    width[0] = 0.0
    width[1:] = R_star * (1.0 - eta) * np.exp((idx[1:] - 1.0) * math.log(eta))
    shell_mass = M_star * (1.0 - eta**gamma) * np.exp(gamma * idx * math.log(eta))
    enclosed_mass = M_star * (-np.expm1(gamma * (idx + 1.0) * math.log(eta)))
    rho = np.full(N + 1, np.nan)
    # mass and width both underflow in the deep tail; 0/0 -> nan is fine
    # there, log_rho stays exact
    with np.errstate(divide="ignore", invalid="ignore"):
        rho[1:] = shell_mass[1:] / (FOUR_PI * radius[1:] ** 2 * width[1:])

    return MassDistribution(
        eta=float(eta), gamma=float(gamma), M_star=float(M_star),
        R_star=float(R_star), G=float(G), N=N,
        radius=radius, width=width, shell_mass=shell_mass,
        enclosed_mass=enclosed_mass, rho=rho,
    )


def coupling_constant(eta, gamma, zeta=0.0):
    """Limit coupling kappa = (4 + zeta) / (eta**(-gamma/2) + eta**(gamma/2))."""
    if not (0.0 < eta < 1.0):
        raise ValidationError(f"eta must lie in (0,1), got {eta!r}")
    _check_positive("gamma", gamma)
    if 4.0 + zeta <= 0.0:
        raise ValidationError(f"zeta must exceed -4, got {zeta!r}")
    return (4.0 + zeta) / (eta ** (-gamma / 2.0) + eta ** (gamma / 2.0))


def profile_constant(eta, gamma, zeta=0.0):
    """Scaled-exponent amplitude c with 4 + zeta = c*K.

    K = (1 + eta**-gamma) / (eta**-1 - 1) ties the adiabatic amplitude to
    the target diagonal offset zeta; with eta=1/2, gamma=2 one gets K=5.
    """
    K = (1.0 + eta ** (-gamma)) / (1.0 / eta - 1.0)
    return (4.0 + zeta) / K


@dataclass(frozen=True)
class ScalingParams:
    """Limit data of the operator coefficients: centre, coupling, interval."""

    lambda_star: float
    kappa: float
    zeta: float

    @property
    def centre(self):
        return -self.zeta * self.lambda_star

    @property
    def half_width(self):
        return 2.0 * self.kappa * self.lambda_star

    @property
    def interval(self):
        """Predicted essential-spectrum interval (lo, hi)."""
        z = self.centre
        w = self.half_width
        return (z - w, z + w)


def scaling_params(dist, zeta=0.0):
    return ScalingParams(
        lambda_star=dist.lambda_star,
        kappa=coupling_constant(dist.eta, dist.gamma, zeta),
        zeta=float(zeta),
    )


@dataclass(frozen=True)
class GammaProfile:
    """Adiabatic-exponent profile Gamma(I) along the shells.

    Two kinds are supported.  ``"geometric"`` profiles decay with the
    shells, Gamma(I) = scaled(I) * eta**I, and are stored through their
    scaled part only (the raw values underflow long before I = N).
    ``"constant"`` profiles keep Gamma(I) = scaled(I) with scaled(I)
    typically a constant array; they model stiff polytropic envelopes.
    """

    kind: str
    scaled: np.ndarray = field(repr=False)
    c: float = np.nan
    b: float = 0.0

    def value(self, dist, i):
        """Raw Gamma(i); may underflow for geometric profiles at large i."""
        i = np.asarray(i)
        g = self.scaled[i]
        if self.kind == "geometric":
            return g * dist.eta ** np.asarray(i, dtype=float)
        return g


def gamma_profile(dist, kind="geometric", *, c=None, value=None, zeta=0.0, perturbation=None):
    """Build a :class:`GammaProfile` over shells 0..N.

    For ``kind="geometric"`` the scaled part is c + perturbation(I) with c
    defaulting to :func:`profile_constant`; ``perturbation`` may be an
    array over 0..N (e.g. a sparse bump field).  For ``kind="constant"``
    pass the constant adiabatic exponent through ``value``.
    """
    n = dist.N
    if kind == "geometric":
        if c is None:
            c = profile_constant(dist.eta, dist.gamma, zeta)
        scaled = np.full(n + 1, float(c))
        if perturbation is not None:
            perturbation = np.asarray(perturbation, dtype=float)
            if perturbation.shape != (n + 1,):
                raise ValidationError(
                    f"perturbation must have shape ({n + 1},), got {perturbation.shape}")
            scaled = scaled + perturbation
        if np.any(scaled <= 0.0):
            raise ValidationError("Gamma profile must stay positive")
        return GammaProfile(kind="geometric", scaled=scaled, c=float(c))
    if kind == "constant":
        if value is None:
            raise ValidationError('kind="constant" requires value=Gamma')
        _check_positive("value", value)
        return GammaProfile(kind="constant", scaled=np.full(n + 1, float(value)), c=float(value))
    raise ValidationError(f"unknown profile kind {kind!r}")


@dataclass(frozen=True)
class PressureDensityDistribution:
    """Mass distribution plus pressure law and adiabatic profile.

    ``P_over_M`` stores the specific pressure (P/M)(I) of each shell, the
    only combination the operator assembly ever needs.  ``mc`` is the
    mass-consistency factor 4*pi*r**2*width*rho / M, identically one when
    the density is the canonical one derived from the shell masses.
    """

    dist: MassDistribution
    gamma: GammaProfile
    zeta: float
    pressure_mode: str
    P_over_M: np.ndarray = field(repr=False)
    mc: np.ndarray = field(repr=False)
    C_star: float = np.nan
    e3: float = np.nan

    @property
    def scaling(self):
        return scaling_params(self.dist, self.zeta)

    def pressure(self, i):
        """Raw P(i) = (P/M)(i) * M(i); underflows at large i."""
        i = np.asarray(i)
        return self.P_over_M[i] * self.dist.shell_mass[i]


def _pressure_limit(dist):
    """(P/M)(I) = Lambda_star*(1 + eta**I)/(4*pi*R_star), geometric tail."""
    idx = np.arange(dist.N + 1, dtype=float)
    scale = dist.lambda_star / (FOUR_PI * dist.R_star)
    return scale * (1.0 + dist.eta**idx)


def _pressure_hse(dist):
    """Specific pressure from the discrete hydrostatic recursion.

    (P/M)(I) = sum_{k>=1} eta**(gamma*k) * G*Mfrak(I+k-1) / (4*pi*r(I+k-1)**4),
    the unique bounded solution of
    (P/M)(I) = eta**gamma * [ (P/M)(I+1) + G*Mfrak(I)/(4*pi*r(I)**4) ].
    Evaluated by direct tail summation; the series converges like
    eta**(gamma*k) so ~40/ (gamma*log(1/eta)) terms give machine accuracy.
    """
    eta, gamma = dist.eta, dist.gamma
    n_terms = max(8, int(math.ceil(-40.0 * math.log(10.0) / (gamma * math.log(eta)))))
    n = dist.N
    out = np.zeros(n + 1)
    lam = dist.lambda_star
    # g(J) = G*Mfrak(J)/(4*pi*r(J)**4) evaluated past N as well
    idx = np.arange(1, n + n_terms + 1, dtype=float)
    frac = (-np.expm1(gamma * (idx + 1.0) * math.log(eta))) / (-np.expm1(idx * math.log(eta))) ** 4
    g = lam / (FOUR_PI * dist.R_star) * frac
    q = eta**gamma
    acc = np.zeros(n)  # Horner accumulation from the far tail inward
    for k in range(n_terms, 0, -1):
        acc = q * (acc + g[k - 1 : k - 1 + n])
    out[1:] = acc
    out[0] = np.nan
    return out


def _pressure_power_law(dist, gamma_prof, C_star):
    """(P/M)(I) = 4*pi*C_star*r(I)**2*width(I)*eta**(e3*I) for the stiff family.

    e3 = (gamma-1)*(Gamma-1) - 2 makes P*rho/M**2 an exact power law; for
    (gamma-1)*(Gamma-1) = 1 the scaled couplings become I-independent up
    to surface curvature factors.
    """
    if gamma_prof.kind != "constant":
        raise ValidationError('pressure_mode="polytrope" requires a constant Gamma profile')
    Gamma = gamma_prof.c
    e3 = (dist.gamma - 1.0) * (Gamma - 1.0) - 2.0
    if C_star is None:
        C_star = dist.lambda_star * dist.eta / (16.0 * math.pi**2 * dist.R_star**4 * (1.0 - dist.eta))
    _check_positive("C_star", C_star)
    idx = np.arange(dist.N + 1, dtype=float)
    # r^2 * width * eta^(e3*I) in log space: the power can grow or shrink
    log_term = np.full(dist.N + 1, -np.inf)
    log_term[1:] = (
        2.0 * np.log(dist.radius[1:])
        + dist.log_width(idx[1:])
        + e3 * idx[1:] * math.log(dist.eta)
    )
    out = FOUR_PI * C_star * np.exp(log_term)
    out[0] = np.nan
    return out, float(C_star), float(e3)


def build_pd_distribution(dist, gamma_prof=None, *, zeta=0.0, pressure_mode="limit",
                          C_star=None, rho_scale=None):
    """Attach a pressure law and adiabatic profile to a mass distribution.

    pressure_mode
        "limit"     -- (P/M)(I) = Lambda_star*(1+zeta/4)*(1+eta**I)/(4 pi R_star),
                       geometric approach to the tail value.
        "hse"       -- unique bounded solution of the discrete hydrostatic
                       balance; admissible to machine precision.
        "polytrope" -- exact power law in P*rho/M**2 with amplitude C_star,
                       used with constant Gamma profiles.
    rho_scale
        Optional array over 0..N multiplying the canonical density; it
        enters the operator through the mass-consistency factor.
    """
    if gamma_prof is None:
        gamma_prof = gamma_profile(dist, "geometric", zeta=zeta)
    if gamma_prof.scaled.shape != (dist.N + 1,):
        raise ValidationError("gamma profile and mass distribution sizes differ")
    C_out, e3 = np.nan, np.nan
    if pressure_mode == "limit":
        p_over_m = _pressure_limit(dist)
    elif pressure_mode == "hse":
        p_over_m = _pressure_hse(dist)
    elif pressure_mode == "polytrope":
        p_over_m, C_out, e3 = _pressure_power_law(dist, gamma_prof, C_star)
    else:
        raise ValidationError(f"unknown pressure_mode {pressure_mode!r}")

    mc = np.ones(dist.N + 1)
    if rho_scale is not None:
        rho_scale = np.asarray(rho_scale, dtype=float)
        if rho_scale.shape != (dist.N + 1,):
            raise ValidationError(f"rho_scale must have shape ({dist.N + 1},)")
        if np.any(rho_scale <= 0.0):
            raise ValidationError("rho_scale must be positive")
        mc = rho_scale.copy()
    mc[0] = np.nan

    return PressureDensityDistribution(
        dist=dist, gamma=gamma_prof, zeta=float(zeta), pressure_mode=pressure_mode,
        P_over_M=p_over_m, mc=mc, C_star=C_out, e3=e3,
    )


@dataclass(frozen=True)
class AdmissibilityReport:
    """Tail residuals of the structural identities, relative to Lambda_star*R_star.

    ``hse_residual`` is the largest hydrostatic-balance defect over the
    last quartile of shells; ``mass_residual`` the largest deviation of
    the mass-consistency factor from one.  ``admissible`` requires a
    decaying (geometric) adiabatic profile and both residuals below tol.
    """

    hse_residual: float
    mass_residual: float
    gamma_kind: str
    tol: float

    @property
    def hse_ok(self):
        return self.hse_residual <= self.tol

    @property
    def mass_ok(self):
        return self.mass_residual <= self.tol

    @property
    def admissible(self):
        return self.gamma_kind == "geometric" and self.hse_ok and self.mass_ok


def hse_residual_array(pd, i_lo=1, i_hi=None):
    """Scale-free hydrostatic defect per shell.

    res(I) = 4*pi*r(I)**2 * [ (P/M)(I+1) - eta**-gamma * (P/M)(I) ]
             + G*Mfrak(I)/r(I)**2,

    which vanishes identically for the "hse" pressure law.  The eta**-gamma
    factor is the exact mass ratio M(I)/M(I+1); writing the difference this
    way avoids both P and M underflow.
    """
    dist = pd.dist
    if i_hi is None:
        i_hi = dist.N - 1
    if not (1 <= i_lo <= i_hi <= dist.N - 1):
        raise ValidationError(f"need 1 <= i_lo <= i_hi <= N-1, got ({i_lo}, {i_hi})")
    idx = np.arange(i_lo, i_hi + 1)
    r = dist.radius[idx]
    grad = FOUR_PI * r**2 * (pd.P_over_M[idx + 1] - dist.mass_ratio * pd.P_over_M[idx])
    grav = dist.G * dist.enclosed_mass[idx] / r**2
    return grad + grav


def check_admissibility(pd, tol=1e-8):
    """Evaluate the structural residuals over the last quartile of shells."""
    dist = pd.dist
    i_lo = max(1, dist.N - max(4, dist.N // 4))
    res = hse_residual_array(pd, i_lo, dist.N - 1)
    scale = dist.lambda_star * dist.R_star
    hse = float(np.max(np.abs(res)) / scale)
    mass = float(np.max(np.abs(pd.mc[i_lo:] - 1.0)))
    return AdmissibilityReport(hse_residual=hse, mass_residual=mass,
                               gamma_kind=pd.gamma.kind, tol=float(tol))
