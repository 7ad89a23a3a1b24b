"""Constants used across the toolkit."""

# Urn tasks
MARBLES_PER_URN = 10
EXPERIENTIAL_HORIZON = 20
DESCRIBED_HORIZON = 1
TRIANGLE_CELLS = 66
DEFAULT_PERMUTATIONS = 100

# Gridworld
GRID_ROOM_SIZE = 8
GRID_MARBLES = 20
GRID_HORIZON = 80
GRID_VIEW_SIZE = 5
GRID_EVAL_EPISODES = 200

# Numerical tolerances
INDIFFERENCE_TOLERANCE = 1e-9
PROBABILITY_TOLERANCE = 1e-12
PROXY_TOLERANCE = 1e-9

# Risk shaping
DEFAULT_PROPOSALS = 10

# Ambiguity stack
BLUE_REWARD_CONDITIONS = (-1.0, 0.0, 1.0, 2.0)
RISK_CONDITIONS = (-1.0, 0.0, 1.0)

# Checkpoint header
CHECKPOINT_FORMAT = "rameta-checkpoint"
CHECKPOINT_VERSION = 1

# Time conversion
SECONDS_PER_MINUTE = 60
