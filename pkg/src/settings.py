import os
import logging

from dotenv import load_dotenv

logger = logging.getLogger(__name__)

# Load environment variables from .env file
load_dotenv()

VERSION = "1.0.0"

# Number of paths per Monte Carlo RNG block. Part of the reproducibility
# contract: changing it changes every stochastic result.
PATH_BLOCK_SIZE = 4096

DEFAULT_THREADS = int(os.getenv("QEXODUS_THREADS", "1"))
DEFAULT_OUTPUT_DIR = os.getenv("QEXODUS_OUTPUT_DIR", "out")
LOG_LEVEL = os.getenv("QEXODUS_LOG_LEVEL", "INFO").upper()

if DEFAULT_THREADS < 1:
    logger.error("QEXODUS_THREADS must be a positive integer.")
    raise ValueError("QEXODUS_THREADS must be a positive integer")
