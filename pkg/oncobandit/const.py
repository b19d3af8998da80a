"""Constants used throughout the oncobandit benchmark harness."""

from typing import Final

DOMAIN: Final[str] = "oncobandit"
VERSION: Final[str] = "1.0.0"

# Context / state modes
STATE_GENOMIC: Final[str] = "genomic"
STATE_GUIDELINE: Final[str] = "guideline"
STATE_BOTH: Final[str] = "both"
STATE_MODES: Final[tuple[str, ...]] = (STATE_GENOMIC, STATE_GUIDELINE, STATE_BOTH)
DEFAULT_EMBEDDING_WIDTH: Final[int] = 20

# Reward kinds, as serialized in configs and logs
REWARD_DIFF: Final[str] = "diff"
REWARD_RANK: Final[str] = "rank"
REWARD_PERCENTILE: Final[str] = "percentile"

# Named RNG sub-streams
STREAM_SHUFFLE: Final[str] = "shuffle"
STREAM_AGENT: Final[str] = "agent"
STREAM_REWARD_NOISE: Final[str] = "reward-noise"
STREAM_FEATURES: Final[str] = "features"
STREAM_INIT: Final[str] = "init"
STREAM_TRAIN: Final[str] = "train"
STREAM_EXPLORE: Final[str] = "explore"

# Cohort files
CSV_UNIT: Final[str] = "unit"
CSV_DRUG: Final[str] = "drug"
CSV_IC50: Final[str] = "ic50"
RESPONSES_FILE: Final[str] = "responses.csv"
FEATURES_FILE: Final[str] = "features.csv"
BIOMARKERS_FILE: Final[str] = "biomarkers.csv"
RULES_FILE: Final[str] = "rules.txt"
TRUTH_FILE: Final[str] = "truth.json"
BIOMARKER_KEY_PATTERN: Final[str] = r"[A-Z]+:[A-Za-z0-9_]+"
EMBEDDING_PROVENANCE: Final[str] = (
    "precomputed embedding of 18523 cell-line features "
    "(expression, binarized mutation and copy-number)"
)

# Conjugate linear agent
DEFAULT_LINEAR_A0: Final[float] = 6.0
DEFAULT_LINEAR_B0: Final[float] = 6.0
DEFAULT_RIDGE_LAMBDA: Final[float] = 0.25

# Neural linear agent
DEFAULT_NEURAL_LINEAR_A0: Final[float] = 3.0
DEFAULT_NEURAL_LINEAR_B0: Final[float] = 3.0

# Neural family
DEFAULT_HIDDEN_WIDTH: Final[int] = 100
DEFAULT_TRAINING_FREQ: Final[int] = 20
DEFAULT_TRAINING_STEPS: Final[int] = 100
DEFAULT_BATCH_SIZE: Final[int] = 512
DEFAULT_INITIAL_PULLS: Final[int] = 2
DEFAULT_INIT_SCALE: Final[float] = 1.0
DEFAULT_FIXED_RATE: Final[float] = 0.01
DEFAULT_RMS2_RATE: Final[float] = 0.1
DEFAULT_RMS3_RATE: Final[float] = 1.0
DEFAULT_RMS2_DECAY_TAU: Final[float] = 100.0
DEFAULT_RMS3_DECAY_TAU: Final[float] = 5.0
DEFAULT_RMS_INITIAL_MOMENT: Final[float] = 1.0
DEFAULT_RMS_SMOOTHING: Final[float] = 0.9
DEFAULT_RMS_EPSILON: Final[float] = 1e-6
DEFAULT_MAX_GRAD_NORM: Final[float] = 5.0
DEFAULT_DROPOUT_KEEP: Final[float] = 0.8
DEFAULT_PARAM_NOISE_SIGMA: Final[float] = 0.01
DEFAULT_PARAM_NOISE_EPSILON: Final[float] = 0.01
PARAM_NOISE_ADAPT_FACTOR: Final[float] = 1.01
DEFAULT_BOOTSTRAP_Q: Final[int] = 5
DEFAULT_BOOTSTRAP_P: Final[float] = 0.85
DEFAULT_BBB_NOISE_SIGMA: Final[float] = 0.1
DEFAULT_BBB_INIT_RHO: Final[float] = -3.0

# Runner and reports
DEFAULT_WINDOW: Final[int] = 50
STEP_LOG_SUFFIX: Final[str] = "-steps.jsonl"
SUMMARY_FILE: Final[str] = "summary.csv"
AGGREGATE_FILE: Final[str] = "aggregate.csv"
ACTIVITY_SUFFIX: Final[str] = "-activity.csv"
MANIFEST_FILE: Final[str] = "manifest.json"
FAILURES_FILE: Final[str] = "failures.txt"
SUMMARY_CAVEAT: Final[str] = (
    "# no held-out split: agents are scored on the same cohort the embedding was "
    "fitted on, so performance is optimistic"
)

# Synthetic cohorts
DEFAULT_SYNTH_NOISE: Final[float] = 0.1
DEFAULT_PLANTED_BONUS: Final[float] = 1.0
PLANTED_FLAG_THRESHOLD: Final[float] = 1.0
