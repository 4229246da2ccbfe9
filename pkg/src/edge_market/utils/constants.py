# Constants used throughout the package

# Numerical tolerances
TOL_NUM = 1e-9  # algebraic identities
TOL_MBB = 1e-6  # relative, demand-set membership
TOL_FEAS = 1e-7  # column sums of an allocation

# Default solver settings
DEFAULT_PRICE_TOL = 1e-8
DEFAULT_MAX_ITERS = 200_000
DEFAULT_CERTIFICATE_TOL = 1e-8
DEFAULT_RHO = 0.99
DEFAULT_CES_STEP = 0.001
DEFAULT_CES_P0 = 0.2
DEFAULT_MAX_ROUNDS = 1_000
BR_BID_FLOOR = 1e-12
PRICE_FLOOR = 1e-12  # CES prices are kept strictly positive
DIVERGENCE_FACTOR = 1e3

# Net-profit solver
NETPROFIT_OBJECTIVE_WINDOW = 50
NETPROFIT_OBJECTIVE_RTOL = 1e-10

# Scenario generation defaults
DEFAULT_AREA_KM = 10.0
DEFAULT_EN_POOL = 100
DEFAULT_SERVICE_POOL = 1000
DEFAULT_T_MAX_RANGE = (15.0, 25.0)
DEFAULT_MU_RANGE = (80.0, 240.0)
DEFAULT_REVENUE_RANGE = (2e-5, 3e-5)
DEFAULT_CAPACITY_RANGE = (10, 20)
DEFAULT_DELAY_PER_KM = 1.0
RNG_ALGORITHM = "PCG64"

# Fixtures shipped with the package
SIX_EXAMPLE_FIXTURE = "six_example.json"
BASE_CASE_FIXTURE = "base_case.json"
BASE_CASE_SCENARIO_FIXTURE = "base_case_scenario.json"

# Output file names
SCENARIO_FILE = "scenario.json"
INSTANCE_FILE = "instance.json"
SOLUTION_FILE = "solution.json"
CERTIFICATE_FILE = "certificate.json"

# CSV formatting (full double precision)
CSV_FLOAT_FORMAT = "{:.17g}"
PRETTY_FLOAT_FORMAT = "{:.6g}"

# CLI exit codes
EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_CERTIFICATE_FAILED = 4

# Certificate threshold applied by the CLI
CLI_CERTIFICATE_TOL = 1e-6

THREADS_ENV_VAR = "EDGEMARKET_THREADS"
DEFAULT_MAX_THREADS = 8

LOGGING_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOGGING_LEVEL = "INFO"
