"""
Constants used throughout the application
"""

# ============================================
# SAMPLE COLUMNS
# ============================================
Y = 'y'
X = 'x'
Z = 'z'
XSTAR = 'xstar'
VARKAPPA = 'varkappa'
CDF = 'cdf'

SAMPLE_COLUMNS = [Y, X, Z]

# ============================================
# CURVE TABLE COLUMNS
# ============================================
GRID_X = 'x'
Q_POOLED = 'q_pooled'
Q_POOLED_D1 = 'q_pooled_d1'
Q_POOLED_D2 = 'q_pooled_d2'
Q_PREFIX = 'q_'            # followed by the instrument label
S_PREFIX = 's_'
RHO_HAT = 'rho_hat'
RHO_CME = 'rho_cme'
V_TILDE = 'v_tilde'
V_TILDE_D1 = 'v_tilde_d1'
DENOM = 'denom'
RANK_PASS = 'rank_pass'
MASK_REASON = 'mask_reason'

# ============================================
# ESTIMATORS
# ============================================
NAIVE = 'naive'
CORRECTED = 'corrected'
CME = 'cme'
KNOWN_V = 'known_v'
ESTIMATORS = [NAIVE, CORRECTED, CME, KNOWN_V]

# Extra error series recorded by population sweeps
V_ERROR = 'v_tilde'
QUANTILE = 'quantile'
NCME = 'ncme'

# ============================================
# MASK REASONS
# ============================================
REASON_OK = 'ok'
REASON_DENSITY_FLOOR = 'density_floor'
REASON_RANK = 'rank'
REASON_DEGENERATE = 'degenerate_fit'
REASON_NONFINITE = 'nonfinite'
REASON_UPSTREAM = 'upstream'

# ============================================
# REPORT COLUMNS
# ============================================
EVAL_X = 'eval_x'
ESTIMATOR = 'estimator'
TRUTH = 'truth'
MEAN_BIAS = 'mean_bias'
SD = 'sd'
RMSE = 'rmse'
MASKED_FRACTION = 'masked_fraction'
N_VALID = 'n_valid'
PREDICTED_BIAS = 'predicted_bias'
AXIS_VALUE = 'axis_value'
ERROR = 'error'

# ============================================
# STATISTICAL TERMS
# ============================================
T_STAT = 't_statistic'
P_VALUE = 'p_value'
SLOPE = 'slope'
INTERCEPT = 'intercept'
SSR = 'ssr'

# ============================================
# EXIT CODES
# ============================================
EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_METHOD_FAILURE = 2
EXIT_INTERNAL = 3

# ============================================
# OUTPUT FORMAT
# ============================================
FLOAT_FORMAT = '%.12g'
POOLED = 'pooled'
