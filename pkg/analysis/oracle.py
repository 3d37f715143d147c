"""
Population oracle module
Synthetic data-generating processes and exact population quantities by quadrature
"""
from __future__ import annotations

import math
import os
import sys
import warnings
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial.hermite import hermgauss
from numpy.polynomial.legendre import leggauss
from scipy import stats
from scipy.integrate import IntegrationWarning, quad_vec
from scipy.optimize import brentq
from scipy.special import roots_genlaguerre

# Add parent directory to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from config.config import (
    CDF_PANEL_NODES, CDF_PANEL_WIDTH, DENSITY_FLOOR_FRACTION, MAX_ABS_TOL, MIN_HERMITE_NODES,
    MIN_SIGMA, OUTCOME_NOISE_SD, QUADRATURE_ABS_TOL, QUADRATURE_NODES, QUADRATURE_RULE,
    ROOT_TOL, SMOOTHNESS_ORDER, WORKING_SUPPORT_SDS, get_logger, get_spec_config,
)
from utils.constants import *
from utils.errors import (
    InvalidSpec, LengthMismatch, OutOfRange, QuadratureNotConverged, TooFewObservations,
)
from utils.helpers import make_rng
from analysis.nonparam import DensityCurve, Grid, RegCurve, score_from_density
from analysis.wcme import CurveBundle, CurveSet

logger = get_logger(__name__)

SQRT2 = math.sqrt(2.0)
SQRT_PI = math.sqrt(math.pi)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# Range of zeta treated as its working support when sizing CDF integration
ZETA_RANGES = {
    'normal': (-WORKING_SUPPORT_SDS, WORKING_SUPPORT_SDS),
    'chisq1': (-1.0 / SQRT2, 40.0),
}
ZETA_THIRD_MOMENTS = {'normal': 0.0, 'chisq1': 2.0 * SQRT2}


# ============================================
# CATALOG FUNCTIONS
# ============================================


def _rho_affine(x, order, a=0.0, b=1.0):
    if order == 0:
        return a + b * x
    if order == 1:
        return np.full_like(x, b)
    return np.zeros_like(x)


def _rho_quadratic(x, order, a=0.0, b=0.0, c=1.0):
    if order == 0:
        return a + b * x + c * x * x
    if order == 1:
        return b + 2.0 * c * x
    return np.full_like(x, 2.0 * c)


def _rho_exp_half(x, order):
    return np.exp(0.5 * x) * 0.5 ** order


def _rho_logistic(x, order):
    p = 0.5 * (1.0 + np.tanh(0.5 * x))
    if order == 0:
        return p
    if order == 1:
        return p * (1.0 - p)
    return p * (1.0 - p) * (1.0 - 2.0 * p)


RHO_CATALOG: Dict[str, Callable] = {
    'affine': _rho_affine,
    'quadratic': _rho_quadratic,
    'exp_half': _rho_exp_half,
    'logistic': _rho_logistic,
}


def _sigma_constant(x, c=1.0):
    return np.full_like(x, c), np.zeros_like(x), np.zeros_like(x)


def _sigma_sqrt_quadratic(x, a=0.25):
    sigma = np.sqrt(1.0 + a * x * x)
    d1 = a * x / sigma
    return sigma, d1, (a - d1 * d1) / sigma


def _sigma_lin_rc(x, var1=1.0, var2=0.0, cov12=0.0):
    # sigma^2 = var1 + var2 x^2 + 2 cov12 x (random-coefficient linear error)
    sigma = np.sqrt(var1 + var2 * x * x + 2.0 * cov12 * x)
    d1 = (var2 * x + cov12) / sigma
    return sigma, d1, (var2 - d1 * d1) / sigma


SIGMA_CATALOG: Dict[str, Callable] = {
    'constant': _sigma_constant,
    'sqrt_quadratic': _sigma_sqrt_quadratic,
    'lin_rc': _sigma_lin_rc,
}

ZETA_LAWS = ('normal', 'chisq1')


@dataclass(frozen=True)
class FunctionSpec:
    """Catalog id plus keyword parameters."""

    kind: str
    params: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {'kind': self.kind, 'params': dict(self.params)}


@dataclass(frozen=True)
class NormalLaw:
    mean: float
    var: float

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    def log_pdf(self, r: np.ndarray) -> np.ndarray:
        d = r - self.mean
        return -0.5 * d * d / self.var - 0.5 * math.log(self.var) - LOG_SQRT_2PI

    def score(self, r: np.ndarray) -> np.ndarray:
        return -(r - self.mean) / self.var

    def pdf_ratio2(self, r: np.ndarray) -> np.ndarray:
        """f''/f."""
        d = r - self.mean
        return d * d / self.var ** 2 - 1.0 / self.var


class MuTransform:
    """Strictly increasing map kappa -> X* with a closed-form inverse."""

    def __init__(self, spec: FunctionSpec):
        self.spec = spec
        p = spec.params
        if spec.kind == 'affine':
            self.a = float(p.get('a', 0.0))
            self.b = float(p.get('b', 1.0))
            if not self.b > 0:
                raise InvalidSpec(f"Affine mu needs a positive slope, got {self.b}")
        elif spec.kind == 'cubic':
            self.c = float(p.get('c', 0.1))
            if not self.c > 0:
                raise InvalidSpec(f"Cubic mu needs c > 0, got {self.c}")
        else:
            raise InvalidSpec(f"Unknown mu transform: {spec.kind}. Choose 'affine' or 'cubic'")

    def forward(self, k):
        k = np.asarray(k, dtype=float)
        if self.spec.kind == 'affine':
            return self.a + self.b * k
        return k + self.c * k ** 3

    def inverse(self, x):
        x = np.asarray(x, dtype=float)
        if self.spec.kind == 'affine':
            return (x - self.a) / self.b
        # Cardano for c k^3 + k - x = 0 (single real root), then one Newton step
        p = 1.0 / self.c
        q = -x / self.c
        disc = np.sqrt(0.25 * q * q + p ** 3 / 27.0)
        k = np.cbrt(-0.5 * q + disc) + np.cbrt(-0.5 * q - disc)
        return k - (self.c * k ** 3 + k - x) / (3.0 * self.c * k * k + 1.0)


# ============================================
# SPEC
# ============================================


@dataclass(frozen=True)
class DgpSpec:
    """
    Fully specified synthetic model

    Y = rho(X*) + U,  U ~ N(0, 0.25);  X*|Z=z ~ N(mean_z, var_z);
    X = X* + tau * sigma(X*) * zeta;  optional kappa = mu^{-1}(X*).
    """

    rho: FunctionSpec
    fxz: Dict[str, NormalLaw]
    z_probs: Dict[str, float]
    sigma: FunctionSpec = field(default_factory=lambda: FunctionSpec('constant', {'c': 1.0}))
    zeta: str = 'normal'
    tau: float = 0.0
    ncme_mu: Optional[FunctionSpec] = None
    smoothness_order: int = SMOOTHNESS_ORDER

    def __post_init__(self):
        if self.rho.kind not in RHO_CATALOG:
            raise InvalidSpec(f"Unknown rho: {self.rho.kind}. Choose one of {list(RHO_CATALOG)}")
        if self.sigma.kind not in SIGMA_CATALOG:
            raise InvalidSpec(f"Unknown sigma: {self.sigma.kind}. Choose one of {list(SIGMA_CATALOG)}")
        if self.zeta not in ZETA_LAWS:
            raise InvalidSpec(f"Unknown zeta law: {self.zeta}. Choose one of {list(ZETA_LAWS)}")
        if self.zeta == 'chisq1' and self.sigma.kind != 'constant':
            raise InvalidSpec("The chi-square zeta law is only paired with a constant sigma")
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise InvalidSpec(f"tau must be a nonnegative number, got {self.tau}")

        labels = list(self.fxz)
        if len(labels) < 2:
            raise InvalidSpec("At least two instrument values are required")
        if set(labels) != set(self.z_probs):
            raise InvalidSpec("fxz and z_probs must have the same instrument labels")
        probs = np.array([self.z_probs[k] for k in labels], dtype=float)
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise InvalidSpec("z_probs must be positive and sum to 1")
        for label, law in self.fxz.items():
            if not (np.isfinite(law.mean) and law.var > 0):
                raise InvalidSpec(f"Invalid conditional law for z={label}: {law}")

        if self.ncme_mu is not None:
            MuTransform(self.ncme_mu)
        if self.smoothness_order < 3:
            raise InvalidSpec("smoothness_order must be at least 3")

        try:
            rng_lo, rng_hi = self.xstar_support()
            check_x = np.linspace(rng_lo, rng_hi, 401)
            self.rho_fn(check_x)
            with np.errstate(invalid='ignore'):
                sigma_vals = self.sigma_derivs(check_x)[0]
        except TypeError as exc:
            raise InvalidSpec(f"Bad catalog parameters: {exc}")
        if not np.all(np.isfinite(sigma_vals)) or np.min(sigma_vals) < MIN_SIGMA:
            raise InvalidSpec("sigma(x) must stay bounded away from 0 on the working range")

    # ---- catalog evaluation -------------------------------------------------

    @property
    def labels(self) -> List[str]:
        return list(self.fxz)

    @property
    def probs(self) -> np.ndarray:
        return np.array([self.z_probs[k] for k in self.labels], dtype=float)

    @property
    def order(self) -> int:
        """Approximation order p: 4 for symmetric zeta, 3 otherwise."""
        return 4 if ZETA_THIRD_MOMENTS[self.zeta] == 0.0 else 3

    def rho_fn(self, x, order: int = 0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return RHO_CATALOG[self.rho.kind](x, order, **self.rho.params)

    def sigma_derivs(self, x) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = np.asarray(x, dtype=float)
        return SIGMA_CATALOG[self.sigma.kind](x, **self.sigma.params)

    def mu(self) -> Optional[MuTransform]:
        return None if self.ncme_mu is None else MuTransform(self.ncme_mu)

    def xstar_support(self) -> Tuple[float, float]:
        lo = min(law.mean - WORKING_SUPPORT_SDS * law.sd for law in self.fxz.values())
        hi = max(law.mean + WORKING_SUPPORT_SDS * law.sd for law in self.fxz.values())
        return lo, hi

    def with_tau(self, tau: float) -> 'DgpSpec':
        return replace(self, tau=float(tau))

    # ---- serialisation ------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            'rho': self.rho.to_dict(),
            'fxz': {k: {'mean': v.mean, 'var': v.var} for k, v in self.fxz.items()},
            'z_probs': dict(self.z_probs),
            'sigma': self.sigma.to_dict(),
            'zeta': self.zeta,
            'tau': self.tau,
            'ncme_mu': None if self.ncme_mu is None else self.ncme_mu.to_dict(),
            'smoothness_order': self.smoothness_order,
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'DgpSpec':
        """
        Build a spec from a document, or from {'spec_id': ..., 'overrides': {...}}

        Raises:
            InvalidSpec: unknown catalog id, missing or malformed fields
        """
        doc = dict(doc)
        if 'spec_id' in doc:
            try:
                base = get_spec_config(doc['spec_id'])
            except ValueError as exc:
                raise InvalidSpec(str(exc))
            base.update(doc.get('overrides') or {})
            doc = base

        try:
            fxz = {str(k): NormalLaw(float(v['mean']), float(v['var'])) for k, v in doc['fxz'].items()}
            mu = doc.get('ncme_mu')
            return cls(
                rho=FunctionSpec(doc['rho']['kind'], dict(doc['rho'].get('params') or {})),
                fxz=fxz,
                z_probs={str(k): float(v) for k, v in doc['z_probs'].items()},
                sigma=FunctionSpec(doc['sigma']['kind'], dict(doc['sigma'].get('params') or {})),
                zeta=str(doc.get('zeta', 'normal')),
                tau=float(doc.get('tau', 0.0)),
                ncme_mu=None if mu is None else FunctionSpec(mu['kind'], dict(mu.get('params') or {})),
                smoothness_order=int(doc.get('smoothness_order', SMOOTHNESS_ORDER)),
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise InvalidSpec(f"Malformed spec document: missing or invalid field {exc}")

    @classmethod
    def from_catalog(cls, spec_id: str, **overrides) -> 'DgpSpec':
        return cls.from_dict({'spec_id': spec_id, 'overrides': overrides})


@dataclass(frozen=True)
class QuadratureConfig:
    """
    Quadrature settings for the population oracle

    rule 'gauss_hermite' uses the Gaussian rule matched to the zeta law
    (Hermite for normal zeta, generalized Laguerre for the chi-square law);
    'adaptive' integrates each grid point with adaptive Gauss-Kronrod.
    """

    rule: str = QUADRATURE_RULE
    nodes: int = QUADRATURE_NODES
    abs_tol: float = QUADRATURE_ABS_TOL

    def __post_init__(self):
        if self.rule == 'adaptive_simpson':
            object.__setattr__(self, 'rule', 'adaptive')
        if self.rule not in ('gauss_hermite', 'adaptive'):
            raise ValueError(f"Unknown quadrature rule: {self.rule}")
        if self.rule == 'gauss_hermite' and self.nodes < MIN_HERMITE_NODES:
            raise ValueError(f"gauss_hermite needs at least {MIN_HERMITE_NODES} nodes, got {self.nodes}")
        if not (0 < self.abs_tol <= MAX_ABS_TOL):
            raise ValueError(f"abs_tol must lie in (0, {MAX_ABS_TOL}], got {self.abs_tol}")


# ============================================
# SAMPLING
# ============================================


@dataclass(frozen=True, eq=False)
class Sample:
    """Observed (y, x, z) plus hidden truth columns when simulated."""

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray
    xstar: Optional[np.ndarray] = None
    varkappa: Optional[np.ndarray] = None

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z).astype(str)
        if not (y.size == x.size == z.size):
            raise LengthMismatch(f"y, x, z lengths differ: {y.size}, {x.size}, {z.size}")
        object.__setattr__(self, 'y', y)
        object.__setattr__(self, 'x', x)
        object.__setattr__(self, 'z', z)

    @property
    def n(self) -> int:
        return self.y.size

    def to_frame(self, with_truth: bool = False) -> pd.DataFrame:
        df = pd.DataFrame({Y: self.y, X: self.x, Z: self.z})
        if with_truth and self.xstar is not None:
            df[XSTAR] = self.xstar
            if self.varkappa is not None:
                df[VARKAPPA] = self.varkappa
        return df


def sample(spec: DgpSpec, n: int, seed: int, stream: Tuple[int, ...] = ()) -> Sample:
    """
    Draw n observations from the spec

    Draw order is fixed (z, X*, zeta, U) so samples are reproducible.

    Args:
        spec: Data-generating process
        n: Sample size
        seed: Base seed
        stream: Extra stream keys (replication, sweep cell)

    Returns:
        Sample with hidden xstar (and varkappa for NCME specs)
    """
    if n < 1:
        raise TooFewObservations(f"Sample size must be at least 1, got {n}")

    rng = make_rng(seed, *stream)
    labels = np.array(spec.labels)
    idx = rng.choice(len(labels), size=n, p=spec.probs)

    means = np.array([spec.fxz[k].mean for k in labels])
    sds = np.array([spec.fxz[k].sd for k in labels])
    xstar = means[idx] + sds[idx] * rng.standard_normal(n)

    if spec.zeta == 'normal':
        zeta = rng.standard_normal(n)
    else:
        zeta = (rng.chisquare(1.0, n) - 1.0) / SQRT2

    sigma = spec.sigma_derivs(xstar)[0]
    x = xstar + spec.tau * sigma * zeta
    y = spec.rho_fn(xstar) + OUTCOME_NOISE_SD * rng.standard_normal(n)

    mu = spec.mu()
    varkappa = None if mu is None else mu.inverse(xstar)
    return Sample(y, x, labels[idx], xstar, varkappa)


# ============================================
# POPULATION CURVES
# ============================================


def _expectation_rule(zeta: str, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[h(zeta)] (normal) or E[h(zeta)] via Laguerre (chi-square)."""
    if zeta == 'normal':
        t, w = hermgauss(nodes)
        return t * SQRT2, w / SQRT_PI
    s, w = roots_genlaguerre(nodes, -0.5)
    # chi2_1 = 2 S with S ~ Gamma(1/2, 1)
    return (2.0 * s - 1.0) / SQRT2, w / SQRT_PI


def _integrand_terms(spec: DgpSpec, law: NormalLaw, points: np.ndarray, u: np.ndarray,
                     sigma_ref: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray], List[np.ndarray]]:
    """
    Log-weight and the polynomial factors of the x-derivatives

    The integrand of f_{X|Z} at x is f(r) B(u, r) with r = x - tau u, where B is
    the density of xi = sigma(r) zeta at u. Returns log[f(r) B(u,r) / g(u)] for
    the reference density g = N(0, sigma_ref^2), together with
    (fB)^(k)/(fB) and the matching factors for rho * f * B, k = 0, 1, 2.
    """
    r = points[..., None] - spec.tau * u
    log_f = law.log_pdf(r)
    lf1 = law.score(r)
    lf2 = law.pdf_ratio2(r)

    if spec.sigma.kind == 'constant' or spec.zeta != 'normal':
        log_ratio = np.zeros_like(r)
        beta1 = np.zeros_like(r)
        beta2 = np.zeros_like(r)
    else:
        sr, sr1, sr2 = spec.sigma_derivs(r)
        sx = sigma_ref[..., None]
        log_ratio = np.log(sx / sr) - 0.5 * u * u * (1.0 / sr ** 2 - 1.0 / sx ** 2)
        w = u / sr
        g1 = sr1 / sr
        beta1 = g1 * (w * w - 1.0)
        beta2 = beta1 ** 2 - 3.0 * w * w * g1 ** 2 + (w * w - 1.0) * sr2 / sr + g1 ** 2

    p1 = lf1 + beta1
    p2 = lf2 + 2.0 * lf1 * beta1 + beta2
    eta = [spec.rho_fn(r, k) for k in range(3)]
    dens = [np.ones_like(r), p1, p2]
    numer = [eta[0], eta[1] + eta[0] * p1, eta[2] + 2.0 * eta[1] * p1 + eta[0] * p2]
    return log_f + log_ratio, dens, numer


def _rule_integrals(spec: DgpSpec, law: NormalLaw, points: np.ndarray,
                    nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """D_k = d^k/dx^k f_{X|Z}(x|z) and N_k = d^k/dx^k [q f](x) by a fixed Gaussian rule."""
    t, w = _expectation_rule(spec.zeta, nodes)
    if spec.zeta == 'normal':
        sigma_ref = spec.sigma_derivs(points)[0]
    else:
        sigma_ref = np.full(points.shape, float(spec.sigma.params.get('c', 1.0)))
    u = sigma_ref[..., None] * t

    log_base, dens, numer = _integrand_terms(spec, law, points, u, sigma_ref)
    with np.errstate(divide='ignore', under='ignore'):
        base = np.exp(log_base + np.log(w))
    D = np.stack([(base * d).sum(axis=-1) for d in dens])
    N = np.stack([(base * m).sum(axis=-1) for m in numer])
    return D, N


def _adaptive_integrals(spec: DgpSpec, law: NormalLaw, points: np.ndarray,
                        abs_tol: float) -> Tuple[np.ndarray, np.ndarray]:
    """Same integrals with adaptive Gauss-Kronrod, one grid point at a time."""
    D = np.empty((3, points.size))
    N = np.empty((3, points.size))

    for i, x0 in enumerate(points):
        x_pt = np.array([x0])

        if spec.zeta == 'normal':
            sigma_ref = spec.sigma_derivs(x_pt)[0]

            def integrand(t):
                # u = sigma_ref * t with t integrated against dt: E over N(0,1) density
                u = sigma_ref[0] * np.atleast_1d(t)
                log_base, dens, numer = _integrand_terms(spec, law, x_pt, u, sigma_ref)
                base = float(np.exp(log_base[0, 0] - 0.5 * t * t - LOG_SQRT_2PI))
                return np.array([base * d[0, 0] for d in dens] + [base * m[0, 0] for m in numer])

            lo, hi = -np.inf, np.inf
        else:
            c = float(spec.sigma.params.get('c', 1.0))
            sigma_ref = np.array([c])

            def integrand(s):
                # chi2_1 = s^2 with density 2 phi(s) on s > 0
                zeta = (s * s - 1.0) / SQRT2
                u = c * np.atleast_1d(zeta)
                log_base, dens, numer = _integrand_terms(spec, law, x_pt, u, sigma_ref)
                base = 2.0 * float(np.exp(log_base[0, 0] - 0.5 * s * s - LOG_SQRT_2PI))
                return np.array([base * d[0, 0] for d in dens] + [base * m[0, 0] for m in numer])

            lo, hi = 0.0, np.inf

        with warnings.catch_warnings():
            warnings.simplefilter('error', IntegrationWarning)
            try:
                res, _, info = quad_vec(integrand, lo, hi, epsabs=abs_tol, epsrel=1e-10,
                                        full_output=True)
            except IntegrationWarning as exc:
                raise QuadratureNotConverged(f"Adaptive quadrature failed at x = {x0}: {exc}")
        if not info.success:
            raise QuadratureNotConverged(f"Adaptive quadrature failed at x = {x0}: {info.message}")
        D[:, i] = res[:3]
        N[:, i] = res[3:]

    return D, N


def _conditional_integrals(spec: DgpSpec, law: NormalLaw, points: np.ndarray,
                           qc: QuadratureConfig) -> Tuple[np.ndarray, np.ndarray]:
    points = np.asarray(points, dtype=float)
    if spec.tau == 0:
        log_f = law.log_pdf(points)
        f = np.exp(log_f)
        lf1, lf2 = law.score(points), law.pdf_ratio2(points)
        eta = [spec.rho_fn(points, k) for k in range(3)]
        D = np.stack([f, f * lf1, f * lf2])
        N = np.stack([f * eta[0], f * (eta[1] + eta[0] * lf1),
                      f * (eta[2] + 2.0 * eta[1] * lf1 + eta[0] * lf2)])
        return D, N

    if qc.rule == 'adaptive':
        return _adaptive_integrals(spec, law, points, qc.abs_tol)

    D, N = _rule_integrals(spec, law, points, qc.nodes)
    D_half, N_half = _rule_integrals(spec, law, points, qc.nodes // 2)
    full = np.concatenate([D, N])
    # every density and numerator integral, abs_tol relative to values above 1
    gap = float(np.max(np.abs(full - np.concatenate([D_half, N_half])) / np.maximum(1.0, np.abs(full))))
    if not gap <= qc.abs_tol:
        raise QuadratureNotConverged(
            f"Gaussian rule with {qc.nodes} nodes disagrees with {qc.nodes // 2} nodes by {gap:.3g}"
        )
    return D, N


def _bundle_from_integrals(grid: Grid, D: np.ndarray, N: np.ndarray) -> CurveBundle:
    with np.errstate(divide='ignore', invalid='ignore'):
        q = N[0] / D[0]
        q1 = (N[1] - q * D[1]) / D[0]
        q2 = (N[2] - 2.0 * q1 * D[1] - q * D[2]) / D[0]
    density = DensityCurve(grid, np.maximum(D[0], 0.0), D[1], D[2])
    floor = DENSITY_FLOOR_FRACTION * float(np.max(density.f))
    return CurveBundle(RegCurve(grid, q, q1, q2, D[0] > 0), density, score_from_density(density, floor))


def population_curves(spec: DgpSpec, grid: Grid, qc: Optional[QuadratureConfig] = None,
                      z_pair: Optional[Tuple[str, str]] = None) -> CurveSet:
    """
    Exact q(x,z), f_{X|Z}, scores and their pooled versions by quadrature

    Derivatives are obtained by differentiating under the integral sign.

    Args:
        spec: Data-generating process
        grid: Evaluation grid
        qc: Quadrature settings
        z_pair: Differencing pair (default: first two labels of the spec)

    Returns:
        CurveSet
    """
    qc = qc or QuadratureConfig()
    per_z = {}
    D_pool = np.zeros((3, len(grid)))
    N_pool = np.zeros((3, len(grid)))

    for label, prob in zip(spec.labels, spec.probs):
        D, N = _conditional_integrals(spec, spec.fxz[label], grid.points, qc)
        per_z[label] = _bundle_from_integrals(grid, D, N)
        D_pool += prob * D
        N_pool += prob * N

    pooled = _bundle_from_integrals(grid, D_pool, N_pool)
    pair = tuple(z_pair) if z_pair is not None else (spec.labels[0], spec.labels[1])
    return CurveSet(grid, per_z, pooled, pair)


# ============================================
# ANALYTIC TRUTH
# ============================================


def true_v(spec: DgpSpec, x) -> Tuple[np.ndarray, np.ndarray]:
    """Skedastic function v(x) = tau^2 sigma(x)^2 and its derivative."""
    sigma, sigma1, _ = spec.sigma_derivs(x)
    tau2 = spec.tau ** 2
    return tau2 * sigma ** 2, 2.0 * tau2 * sigma * sigma1


def xstar_score(spec: DgpSpec, x, label: Optional[str] = None) -> np.ndarray:
    """Score of X* given Z = label, or of the marginal X* law when label is None."""
    x = np.asarray(x, dtype=float)
    if label is not None:
        return spec.fxz[label].score(x)
    dens = np.zeros_like(x)
    deriv = np.zeros_like(x)
    for lab, prob in zip(spec.labels, spec.probs):
        law = spec.fxz[lab]
        f = np.exp(law.log_pdf(x))
        dens += prob * f
        deriv += prob * f * law.score(x)
    return deriv / dens


def predicted_naive_bias(spec: DgpSpec, grid: Grid) -> pd.DataFrame:
    """
    Second-order bias of the naive regression

    q(x,z) - rho(x) ~ v(x)[rho'(x) s_{X*|Z}(x|z) + rho''(x)/2] + rho'(x) v'(x)

    Values only; no derivative columns.

    Returns:
        DataFrame with one row per grid point: column x, one bias column per
        instrument label of the spec (in spec order), then 'pooled', which uses
        the marginal score of X*. Every value is finite.
    """
    x = grid.points
    v, v1 = true_v(spec, x)
    r1, r2 = spec.rho_fn(x, 1), spec.rho_fn(x, 2)

    out = {GRID_X: x}
    for label in spec.labels + [POOLED]:
        score = xstar_score(spec, x, None if label == POOLED else label)
        out[label] = v * (r1 * score + 0.5 * r2) + r1 * v1
    return pd.DataFrame(out)


# ============================================
# POPULATION MARGINALS
# ============================================


class PopulationDist:
    """
    Marginal distribution functions of X, X* and kappa under a spec

    CDFs come from composite Gauss-Legendre integration of the quadrature
    density; quantile functions from bracketed root-finding.
    """

    def __init__(self, spec: DgpSpec, qc: Optional[QuadratureConfig] = None):
        self.spec = spec
        self.qc = qc or QuadratureConfig()
        self._mu = spec.mu()

        self.xstar_lo, self.xstar_hi = spec.xstar_support()
        sigma_max = float(np.max(spec.sigma_derivs(np.linspace(self.xstar_lo, self.xstar_hi, 401))[0]))
        z_lo, z_hi = ZETA_RANGES[spec.zeta]
        self.lo = self.xstar_lo + spec.tau * sigma_max * z_lo
        self.hi = self.xstar_hi + spec.tau * sigma_max * z_hi

        n_panels = int(math.ceil((self.hi - self.lo) / CDF_PANEL_WIDTH))
        self._edges = self.lo + CDF_PANEL_WIDTH * np.arange(n_panels + 1)
        self._gl_t, self._gl_w = leggauss(CDF_PANEL_NODES)

        if spec.tau > 0:
            a, b = self._edges[:-1], self._edges[1:]
            nodes = 0.5 * (b - a)[:, None] * self._gl_t + 0.5 * (a + b)[:, None]
            f = self.density_x(nodes.ravel())[0].reshape(nodes.shape)
            panel = 0.5 * (b - a) * (f * self._gl_w).sum(axis=1)
            self._cum = np.concatenate([[0.0], np.cumsum(panel)])
            logger.debug("PopulationDist: total mass %.15f over [%.3f, %.3f]",
                         self._cum[-1], self.lo, self.hi)

    # ---- X ------------------------------------------------------------------

    def density_x(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Marginal density of X and its derivative."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        f = np.zeros_like(x)
        f1 = np.zeros_like(x)
        for label, prob in zip(self.spec.labels, self.spec.probs):
            D, _ = _conditional_integrals(self.spec, self.spec.fxz[label], x, self.qc)
            f += prob * D[0]
            f1 += prob * D[1]
        return f, f1

    def score_x(self, x) -> np.ndarray:
        f, f1 = self.density_x(x)
        return f1 / f

    def cdf_x(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.spec.tau == 0:
            return self.cdf_xstar(x)

        xc = np.clip(x, self.lo, self.hi)
        k = np.minimum(((xc - self.lo) // CDF_PANEL_WIDTH).astype(int), self._edges.size - 2)
        a = self._edges[k]
        half = 0.5 * (xc - a)
        nodes = half[:, None] * self._gl_t + (a + half)[:, None]
        f = self.density_x(nodes.ravel())[0].reshape(nodes.shape)
        partial = half * (f * self._gl_w).sum(axis=1)
        return self._cum[k] + partial

    def quantile_x(self, s) -> np.ndarray:
        if self.spec.tau == 0:
            return self.quantile_xstar(s)
        return self._invert(lambda v: float(self.cdf_x(v)[0]), s, self.lo, self.hi)

    # ---- X* and kappa -------------------------------------------------------

    def cdf_xstar(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        total = np.zeros_like(x)
        for label, prob in zip(self.spec.labels, self.spec.probs):
            law = self.spec.fxz[label]
            total += prob * stats.norm.cdf(x, loc=law.mean, scale=law.sd)
        return total

    def quantile_xstar(self, s) -> np.ndarray:
        return self._invert(lambda v: float(self.cdf_xstar(v)[0]), s, self.xstar_lo, self.xstar_hi)

    def cdf_kappa(self, k) -> np.ndarray:
        k = np.atleast_1d(np.asarray(k, dtype=float))
        return self.cdf_xstar(k if self._mu is None else self._mu.forward(k))

    def quantile_kappa(self, s) -> np.ndarray:
        q = self.quantile_xstar(s)
        return q if self._mu is None else self._mu.inverse(q)

    def rho_kappa(self, k) -> np.ndarray:
        """Regression of Y on kappa: rho(mu(kappa))."""
        k = np.asarray(k, dtype=float)
        return self.spec.rho_fn(k if self._mu is None else self._mu.forward(k))

    # ---- helpers ------------------------------------------------------------

    @staticmethod
    def _invert(cdf: Callable[[float], float], s, lo: float, hi: float) -> np.ndarray:
        levels = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty_like(levels)
        for i, level in enumerate(levels):
            if not 0.0 < level < 1.0:
                raise OutOfRange(f"Quantile level must lie in (0, 1), got {level}")
            out[i] = brentq(lambda v: cdf(v) - level, lo, hi, xtol=ROOT_TOL, rtol=4 * np.finfo(float).eps,
                            maxiter=500)
        return out


def population_dist(spec: DgpSpec, qc: Optional[QuadratureConfig] = None) -> PopulationDist:
    """Marginal CDF/QF/density objects for X, X* and kappa."""
    return PopulationDist(spec, qc)
