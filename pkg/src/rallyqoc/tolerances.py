"""Centralized numerical tolerances and fixed constants.

Every tolerance used by the library lives here so that contracts are
auditable in one place.
"""

# Matrix tag checks
HERMITIAN_ATOL = 1e-12        # max-entry asymmetry allowed for Hermitian inputs
UNITARY_ATOL = 1e-10          # max-entry deviation of U^dag U from identity
STATE_NORM_ATOL = 1e-12       # state-vector norm deviation from 1
EIG_RECONSTRUCT_RTOL = 1e-10  # eigendecomposition reconstruction residual

# Propagator agreement
CACHE_AGREEMENT_ATOL = 1e-12  # cached vs direct propagator agreement
GRAPE_RALLYA_ATOL = 1e-12     # GRAPE vs RallyA(N_P=1) identity

# Gradients
FD_STEP = 1e-6                # central finite-difference step (scaled by max(1,|p|))
FD_REL_TOL = 1e-5             # analytic vs FD relative-error gate
FRECHET_CONFLUENT_RTOL = 1e-12  # eigenvalue-gap threshold for the confluent limit

# Optimizers
DEFAULT_XATOL = 1e-8
DEFAULT_FATOL = 1e-8
DEFAULT_MAX_FOM_EVALS = 10 ** 6

# Analysis
DLA_RANK_RTOL = 1e-10         # Gram-Schmidt independence threshold (relative)
DLA_DIM_GUARD = 64            # largest Hilbert-space dimension for dla_rank
HAAR_SIGMA_SQ = {1: 1.0, 2: 20.0, 3: 658.0, 4: 32748.0}  # Var|tr(U^dag V)|^{2t}, Haar
PLATEAU_FIT_MULTIPLIER = 10.0  # exclude delta < multiplier*plateau from decay fits
MOMENT_MIN_PAIRS = 10 ** 3

# Hardware constraints (Rydberg platform)
MIN_ATOM_DISTANCE_UM = 5.0
MIN_PULSE_DURATION_US = 0.004  # 4 ns
RYDBERG_C6 = 5420e3            # MHz * um^6 (= 5420 GHz * um^6)
RYDBERG_RABI_MHZ = 1.0
RYDBERG_DETUNING_BOUND_MHZ = 10.0

# Bandwidth rise profile defaults
RISE_TAU_DEFAULT = 10.0
RISE_N_INT_DEFAULT = 100
RISE_EPSILON_DEFAULT = 1e-10
