"""Project-wide constants."""

# Marker for an absent label in integer label arrays
UNLABELED = -1

# Rotation self-supervision
NUM_ROTATIONS = 4

# Optimizer defaults (generator / discriminator Adam)
G_LEARNING_RATE = 5e-5
D_LEARNING_RATE = 2e-4
ADAM_BETA1 = 0.0
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
D_STEPS_PER_G = 2

# Full-scale protocol constants
FULL_BATCH_SIZE = 2048
FULL_LATENT_DIM = 120
FULL_G_STEPS = 250_000
FULL_EVAL_SAMPLES = 50_000

# Desk-scale defaults
DESK_BATCH_SIZE = 64
DESK_LATENT_DIM = 16
DESK_IMAGE_SIZE = 32
DESK_CHANNELS = 16
DESK_G_STEPS = 2_000
DESK_EVAL_EVERY = 500
DESK_EVAL_SAMPLES = 10_000

# Evaluation protocol
EVAL_SETS = 5
COVARIANCE_RIDGE = 1e-6
EMBEDDING_DIM = 64

# Loss weights
DEFAULT_GAMMA = 0.5
DEFAULT_LAMBDA = 0.2
DEFAULT_ALPHA = 0.2
DEFAULT_BETA = 0.5
DEFAULT_BETA_COTRAIN = 1.0
DEFAULT_N_CLUSTERS = 50

# Sweeps used in the reference experiments (config grids, not a tuner)
GAMMA_GRID = (0.1, 0.5, 1.0)
UNLABELED_PER_BATCH_GRID = (1024, 1536, 1792)
LAMBDA_GRID = (0.1, 0.2, 0.4)
BETA_GRID = (0.25, 0.5, 1.0, 2.0)
N_CLUSTERS_GRID = (50, 100, 200, 500, 1000)
K_PERCENT_GRID = (5, 10, 20)

# Feature-extractor pretraining schedule (epochs out of 65, kept as fractions)
PRETRAIN_REFERENCE_EPOCHS = 65
PRETRAIN_WARMUP_EPOCHS = 5
PRETRAIN_DECAY_EPOCHS = (45, 55)
PRETRAIN_DECAY_FACTOR = 0.1
PRETRAIN_LR_PER_256 = 0.1
PRETRAIN_UNLABELED_PER_BATCH = 1536

# Normalization
BN_MOVING_AVERAGE_DECAY = 0.999
BN_EPSILON = 1e-5
SPECTRAL_NORM_EPSILON = 1e-12

# Divergence handling
MAX_CONSECUTIVE_DIVERGENCES = 3

# Reference parameter counts of the 128x128 architecture
FULL_GENERATOR_PARAMETERS = 70_433_988
FULL_DISCRIMINATOR_PARAMETERS = 87_982_370

# File names inside artifact directories
PROVIDER_METADATA_FILE = "provider.json"
EXTRACTOR_WEIGHTS_FILE = "extractor.npz"
CENTROIDS_FILE = "centroids.npz"
EMBEDDER_WEIGHTS_FILE = "embedder.npz"
EMBEDDER_METADATA_FILE = "embedder.json"
METRICS_FILE = "metrics.jsonl"
LABEL_MANIFEST_FILE = "labels.txt"
