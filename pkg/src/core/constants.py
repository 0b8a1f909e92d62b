# RNG stream ids (one per logical consumer)
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_PARTITION = 2
STREAM_SPECTRAL_START = 3
STREAM_MONTE_CARLO = 4

# Dataset sub-streams
SUBSTREAM_TEACHER = 0
SUBSTREAM_TRAIN_POINTS = 1
SUBSTREAM_TEST_POINTS = 2

# Model sub-streams
SUBSTREAM_WEIGHTS = 0
SUBSTREAM_SIGNS = 1

# Numerical tolerances
SYMMETRY_TOLERANCE = 1e-12
EIGEN_RESIDUAL_TOLERANCE = 1e-9
JACOBI_OFF_DIAGONAL_TOLERANCE = 1e-14
JACOBI_MAX_SWEEPS = 100
SOLVE_RESIDUAL_TOLERANCE = 1e-9
SOLVE_MAX_REFINEMENTS = 2
POWER_ITERATION_MAX_STEPS = 1000
POWER_ITERATION_TOLERANCE = 1e-12
UNIT_NORM_TOLERANCE = 1e-12
FORWARD_NORM_TOLERANCE = 1e-9
PARALLEL_TOLERANCE = 1e-9
MAX_RESAMPLE_ATTEMPTS = 1000
GRAM_SYMMETRY_TOLERANCE = 1e-10
DEGENERATE_EIGENVALUE = 1e-12
# lambda_min / lambda_max below this is treated as a degenerate spectrum
DEGENERATE_RELATIVE_EIGENVALUE = 1e-5
BOUND_SLACK = 1e-10
DECOMPOSITION_TOLERANCE = 1e-8

# Dataset generation
CLUSTER_SPREAD = 0.5
MIN_INPUT_DIM = 2

# Training
DIVERGENCE_FACTOR = 1e6
PROGRESS_LOG_EVERY = 1000
DEFAULT_WORKERS = 1

# Theory defaults
CONTRACTION_PASS_FRACTION = 0.9
SEED_MAJORITY_FRACTION = 0.8
GENERALIZATION_SLACK = 1.0
RKHS_MOVEMENT_SLACK = 0.5
CLAIM_MARGIN_DIVISOR = 40.0
MC_STANDARD_ERRORS = 3.0

# Report notes
NOTE_EXACT_FIT = "exact-fit"
# At R = D every flip set Q_i is usually empty and C2 cancels C1
NOTE_MOVEMENT_RADIUS = "movement-radius"
NOTE_MEASURED_RADIUS = "measured-radius"

# Experiment defaults
DEFAULT_N = 16
DEFAULT_D = 8
DEFAULT_WIDTH = 2**13
DEFAULT_CLIENTS = 4
DEFAULT_LOCAL_STEPS = 4
DEFAULT_SIGMA = 1.0
DEFAULT_SAFETY_C = 1.0
DEFAULT_EPS = 1e-3
DEFAULT_DELTA = 0.05
DEFAULT_SEEDS = (0,)
DEFAULT_MAX_ROUNDS = 20000
DEFAULT_TEST_SIZE = 256
DEFAULT_MC_SAMPLES = 10**6
DEFAULT_OUTPUT_DIR = "runs"
DEFAULT_DISTRIBUTION = "uniform-sphere"
DEFAULT_LABEL_RULE = "linear-teacher"
DEFAULT_PARTITION = "iid"
DEFAULT_RECORD_LEVEL = "bounds"
DEFAULT_CLIENTS_LIST = (2, 4, 8)

# File headers
DATASET_HEADER = "# fl-ntk dataset v1, n={n}, d={d}"
PARTITION_HEADER = "# fl-ntk partition v1, n={n}, N={N}"
PARAMS_HEADER = "# fl-ntk params v1, d={d}, m={m}, sigma={sigma}"
GRAM_HEADER = "# fl-ntk gram v1, kind={kind}, n={n}"

# Output file names
DATASET_FILE = "dataset.csv"
PARTITION_FILE = "partition.csv"
PARAMS_FILE = "params.csv"
TRACE_FILE = "trace.csv"
LOCAL_TRACE_FILE = "local.csv"
BOUNDS_FILE = "bounds.csv"
VERIFY_BOUNDS_FILE = "bounds_verify.csv"
SNAPSHOT_GLOBAL_FILE = "snapshots_global.npy"
SNAPSHOT_LOCAL_FILE = "snapshots_local.npy"
SIGNS_FILE = "signs.npy"
SUMMARY_FILE = "summary.json"
CONFIG_ECHO_FILE = "config.json"
GRAM_INF_FILE = "gram_inf.csv"
GRAM_INIT_FILE = "gram_init.csv"
KERNEL_SUMMARY_FILE = "kernel_summary.json"
M_SWEEP_FILE = "m_sweep.csv"
SWEEP_FILE = "sweep.csv"
SWEEP_SUMMARY_FILE = "sweep_summary.csv"
SWEEP_PLOT_FILE = "sweep.png"
LOG_FILE = "/tmp/fl-ntk.log"

# Exit codes
EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DIVERGENCE = 3
EXIT_DEGENERATE = 4
EXIT_AUDIT_FAILED = 5
