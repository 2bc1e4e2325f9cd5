"""
Package-wide constants
"""


class ModelConstants:
    """Model variants accepted by `train --model`"""
    AVAILABLE_MODELS = {
        "rnn-td": {
            "name": "RNN-TD",
            "description": "Recurrent model with mark-specific intensities",
            "family": "neural",
        },
        "rmtpp": {
            "name": "RMTPP (shared intensity)",
            "description": "Same recurrence, one intensity shared by all marks",
            "family": "neural",
        },
        "rnn": {
            "name": "RNN",
            "description": "Same recurrence, mark head only",
            "family": "neural",
        },
        "mc1": {"name": "MC1", "description": "First-order Markov chain", "family": "markov"},
        "mc2": {"name": "MC2", "description": "Second-order Markov chain", "family": "markov"},
        "mc3": {"name": "MC3", "description": "Third-order Markov chain", "family": "markov"},
        "pp-poisson": {
            "name": "PP-poisson",
            "description": "Constant rate per mark",
            "family": "point-process",
        },
        "pp-hawkes": {
            "name": "PP-hawkes",
            "description": "Self-exciting rate per mark",
            "family": "point-process",
        },
        "mspp-poisson": {
            "name": "MSPP-poisson",
            "description": "Constant rate per mark pair",
            "family": "point-process",
        },
        "mspp-hawkes": {
            "name": "MSPP-hawkes",
            "description": "Self-exciting rate per mark pair",
            "family": "point-process",
        },
    }

    HEAD_FOR_MODEL = {"rnn-td": "mark", "rmtpp": "shared", "rnn": "none"}
    SHAPINGS = ("constant", "exponential")
    SHAPING_ALIASES = {"const": "constant", "c": "constant", "exp": "exponential"}

    INIT_STD = 0.1
    INIT_W = 0.1
    LOGIT_CLAMP = 30.0
    SMALL_W = 1e-8


class NumericConstants:
    """Numerical tolerances"""
    TIME_EPS = 1e-6              # hours; floor inside the log-gap feature
    SIMULTANEOUS_SHIFT = 1e-9    # hours added to a tied timestamp
    QUAD_TOL = 1e-8
    QUAD_LIMIT = 200
    RATE_FLOOR = 1e-6
    GRADCHECK_STEP = 1e-5
    GRADCHECK_TOL = 1e-5


class IngestConstants:
    """Corpus preparation defaults"""
    MEMETRACKER_GAP_HOURS = 100.0
    DIANPING_GAP_HOURS = 1440.0
    MIN_LENGTH = 3
    TOP_K = 256
    MAX_LENGTH = 200
    SPLIT_FRACTIONS = (0.8, 0.1, 0.1)
    DEFAULT_EPOCH = "2008-08-01T00:00:00Z"
    YEAR_SPAN = 10.0

    CORPUS_FILE = "corpus.tsv"
    VOCAB_FILE = "vocab.txt"
    SPLIT_FILES = {"train": "train.tsv", "validation": "valid.tsv", "test": "test.tsv"}


class EvalConstants:
    """Evaluation defaults"""
    K_VALUES = (1, 3, 5, 10, 20)
    THETA_POINTS = 50
    THETA_GRIDS = {
        "memetracker": (0.1, 100.0),
        "dianping": (1.0, 1440.0),
    }
    FALLBACK_HORIZON = 1440.0
    MODES = ("free", "given-time")


class ExitCodes:
    """Process exit codes"""
    SUCCESS = 0
    USAGE = 1
    DATA = 2
    NUMERICAL = 3
