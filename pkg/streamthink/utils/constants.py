# Session defaults
DEFAULT_CLIP_CAPACITY_L = 2048
DEFAULT_MAX_THINKING_TIMES = 4
DEFAULT_PER_STEP_VIDEO_TOKEN_CAP = 8192
DEFAULT_THOUGHT_MAX_NEW_TOKENS = 256
DEFAULT_ANSWER_MAX_NEW_TOKENS = 64

# Long-term memory budgets
DEFAULT_MEMORY_BUDGET_ENTRIES = 16
DEFAULT_MEMORY_BUDGET_CHARS = 8000
EMPTY_MEMORY_MARKER = "[Video Memory is empty]"

# Prompt templates
SYSTEM_PREAMBLE = "You are a Streaming Video Analyst."
ANSWER_INSTRUCTION = (
    "Based on the provided Video Memory and the Current Video Clip, "
    "answer the following Problem."
)
BOXED_INSTRUCTION = "Output the final answer in \\boxed{}"
ANSWER_CUE = "Your answer:"
NO_CLIP_MARKER = "<no video clip>"

# Attention mask
DENSE_MASK_LIMIT = 4096
DISALLOWED_SENTINEL = -1.0e9

# SFT packing
DEFAULT_TOKENS_PER_WORD = 1.3

# RL objective
DEFAULT_EPS_LOW = 0.2
DEFAULT_EPS_HIGH = 0.28
DEFAULT_KL_BETA = 0.001

# Backends
DEFAULT_TOKENS_PER_SECOND = 50.0
DEFAULT_HTTP_MODEL = "vst-7b"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"
BACKEND_URL_ENV = "VST_BACKEND_URL"
MOCK_FALLBACK_ANSWER = "\\boxed{unknown}"

# Knowledge-graph synthesis
DEFAULT_ENTITY_WINDOW = 4
DEFAULT_MIN_HOPS = 3
DEFAULT_MAX_HOPS = 8
DEFAULT_MAX_CHAIN_OVERLAP = 0.10
DEFAULT_RESTARTS_PER_CHAIN = 200
DEFAULT_CHAIN_COUNT = 20
DEFAULT_NEAR_DUPLICATE_RATIO = 0.92
BANNED_QA_TOKENS = ["Step", "Clip index", "Path node"]
REASONING_DIMENSIONS = [
    "causal inference",
    "temporal ordering",
    "spatial relation tracking",
    "state change tracking",
    "intent inference",
]
