# Project identity stamped into every provenance header
PROJECT_NAME = "srb-flow-lab"
SERVICE_NAME = "FlowLab"
TOOL_VERSION = "0.3.0"

# Integrator defaults
DEFAULT_STEP = 1e-3
MAX_STEP = 0.1
DEFAULT_RENORM_EVERY = 10
DEFAULT_METHOD = "rk4"

# Splitting / LPF
DEFAULT_WARM = 20.0
NEAR_SINGULARITY = 1e-8
SPLITTING_CLEARANCE = 1e-6
DEGENERACY_TOL = 1e-12
NO_DOMINATION_GAP = 1e-6
FLOW_IN_CENTER_TOL = 1e-3
ORTHOGONAL_G_TOL = 1e-3
DEFAULT_FRAME_SEED = 0

# Criteria
DEFAULT_BURN_IN = 50.0
INCONCLUSIVE_BAND = 0.1
EQUILIBRIUM_HIT = 1e-12
MULTIPLICATIVITY_WARM = 0.5
CURVE_POINTS = 500

# SRB
DEFAULT_GRID_RES = 64
DEFAULT_SMOOTH_SLICES = 10
ORBIT_CHUNK = 10.0

# Exit codes
EXIT_OK = 0
EXIT_CRITERION_FAIL = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

LOG_LEVEL = "INFO"
