LOG_RETENTION = "7 days"
LOG_FILE_NAME = "effbench.log"

# exit codes
EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_SPEC = 2
EXIT_COMPATIBILITY = 3

# batch normalization
BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9

LEAKY_ALPHA = 0.01

# adam, lr and beta1 as used for every comparison run
ADAM_LR = 0.001
ADAM_BETA1 = 0.75
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_BATCH_SIZE = 64
DEFAULT_EPOCHS = 10
DEFAULT_SEEDS = (1, 2, 3, 4, 5)

EFFNET_BOTTLENECK_FACTOR = 0.5
SHUFFLENET_BOTTLENECK_FACTOR = 0.25
MINIMUM_BOTTLENECK_CHANNELS = 6
EFFNET_V2_DEPTH_MULTIPLIER = 2
SHUFFLENET_GROUPS = 4

COMPRESSION_FACTOR = 4  # floats out shrinking by this much or more is flagged

NORMALIZE_STD_FLOOR = 1e-6
GRADIENT_CHECK_STEP = 1e-5

# raw NCHW container
RAW_MAGIC = b"NCHW"
RAW_HEADER_SIZE = 32
RAW_DTYPE_CODES = {1: "<f4", 2: "<f8"}
IDX_IMAGES_MAGIC = 0x00000803
IDX_IMAGES_4D_MAGIC = 0x00000804
IDX_LABELS_MAGIC = 0x00000801

CHECKPOINT_MANIFEST = "checkpoint.json"
RUN_RECORD_FILE = "record.json"
SUMMARY_FILE = "summary.json"
