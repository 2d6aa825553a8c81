PROVENANCE_GENERATED = "generated"
PROVENANCE_REAL = "real"

TERMINATION_CONVERGED = "converged"
TERMINATION_BUDGET = "budget exhausted"
TERMINATION_FAILED = "failed"

CHECKPOINT_MAGIC = "PYINVERT-CHECKPOINT"
CHECKPOINT_VERSION = 1

CSV_SCHEMA_VERSION = 1
TRACE_COLUMNS = [ "iteration", "recon_mse", "recon_sum", "reg_term", "z_error", "label_correct" ]
RECORD_COLUMNS = [ "image_id", "provenance", "reconstruction_loss", "initial_loss", "z_error",
                   "label_true", "label_decoded", "label_tied", "regularizer_enabled", "iterations",
                   "termination" ]

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_VERSION_MISMATCH = 4
EXIT_CONFIG = 5
EXIT_NUMERIC = 6
EXIT_FORMAT = 7
