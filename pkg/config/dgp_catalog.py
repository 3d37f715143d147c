"""
Catalog of synthetic data-generating processes
Each entry is a spec document in the CLI JSON format
"""

# ============================================
# BUILDING BLOCKS
# ============================================
_TWO_NORMALS = {
    '0': {'mean': 0.0, 'var': 1.0},
    '1': {'mean': 1.0, 'var': 1.0},
}
_EQUAL_PROBS = {'0': 0.5, '1': 0.5}
_HOMOSKEDASTIC = {'kind': 'constant', 'params': {'c': 1.0}}

# ============================================
# SPEC CATALOG
# ============================================
SPEC_CATALOG = {
    # Symmetric zeta, homoskedastic error: bias orders tau^2 (naive) vs tau^4
    'gaussian_symmetric': {
        'description': 'rho = exp(x/2), X*|Z=z ~ N(z,1), normal zeta, constant sigma',
        'rho': {'kind': 'exp_half', 'params': {}},
        'fxz': _TWO_NORMALS,
        'z_probs': _EQUAL_PROBS,
        'sigma': _HOMOSKEDASTIC,
        'zeta': 'normal',
        'tau': 0.2,
        'ncme_mu': None,
        'smoothness_order': 4,
    },
    # Skewed zeta: third moment 2*sqrt(2), corrected order drops to tau^3
    'gaussian_asymmetric': {
        'description': 'as gaussian_symmetric with zeta = (chi2_1 - 1)/sqrt(2)',
        'rho': {'kind': 'exp_half', 'params': {}},
        'fxz': _TWO_NORMALS,
        'z_probs': _EQUAL_PROBS,
        'sigma': _HOMOSKEDASTIC,
        'zeta': 'chisq1',
        'tau': 0.2,
        'ncme_mu': None,
        'smoothness_order': 4,
    },
    'gaussian_heteroskedastic': {
        'description': 'as gaussian_symmetric with sigma(x) = sqrt(1 + 0.25 x^2)',
        'rho': {'kind': 'exp_half', 'params': {}},
        'fxz': _TWO_NORMALS,
        'z_probs': _EQUAL_PROBS,
        'sigma': {'kind': 'sqrt_quadratic', 'params': {'a': 0.25}},
        'zeta': 'normal',
        'tau': 0.2,
        'ncme_mu': None,
        'smoothness_order': 4,
    },
    # Random-coefficient linear error X = psi1 + psi2 X*
    'lin_rc': {
        'description': 'linear random-coefficient error, v(x) = tau^2 (1 + 0.25 x^2 + 0.2 x)',
        'rho': {'kind': 'exp_half', 'params': {}},
        'fxz': _TWO_NORMALS,
        'z_probs': _EQUAL_PROBS,
        'sigma': {'kind': 'lin_rc', 'params': {'var1': 1.0, 'var2': 0.25, 'cov12': 0.1}},
        'zeta': 'normal',
        'tau': 0.2,
        'ncme_mu': None,
        'smoothness_order': 4,
    },
    'ncme_cubic': {
        'description': 'gaussian_symmetric observed through mu(k) = k + 0.1 k^3',
        'rho': {'kind': 'exp_half', 'params': {}},
        'fxz': _TWO_NORMALS,
        'z_probs': _EQUAL_PROBS,
        'sigma': _HOMOSKEDASTIC,
        'zeta': 'normal',
        'tau': 0.2,
        'ncme_mu': {'kind': 'cubic', 'params': {'c': 0.1}},
        'smoothness_order': 4,
    },
    # Irrelevant instrument; X* ~ N(0,1) marginally, so F_X is a closed form
    'standard_normal': {
        'description': 'X* ~ N(0,1) for every instrument value, normal zeta',
        'rho': {'kind': 'exp_half', 'params': {}},
        'fxz': {
            '0': {'mean': 0.0, 'var': 1.0},
            '1': {'mean': 0.0, 'var': 1.0},
        },
        'z_probs': _EQUAL_PROBS,
        'sigma': _HOMOSKEDASTIC,
        'zeta': 'normal',
        'tau': 0.2,
        'ncme_mu': None,
        'smoothness_order': 4,
    },
    # Everything symmetric about 0: median of X* is 0 and rho(-x) = 1 - rho(x)
    'symmetric_logistic': {
        'description': 'rho = logistic, X*|Z ~ N(-0.5,1) or N(0.5,1), normal zeta',
        'rho': {'kind': 'logistic', 'params': {}},
        'fxz': {
            'lo': {'mean': -0.5, 'var': 1.0},
            'hi': {'mean': 0.5, 'var': 1.0},
        },
        'z_probs': {'lo': 0.5, 'hi': 0.5},
        'sigma': _HOMOSKEDASTIC,
        'zeta': 'normal',
        'tau': 0.2,
        'ncme_mu': None,
        'smoothness_order': 4,
    },
}
