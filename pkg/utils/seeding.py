# utils/seeding.py
import hashlib
import os
import random

import numpy as np
import torch

from utils.logging_setup import logger


def derive_seed(*parts) -> int:
    """Stable 32-bit seed from any sequence of printable parts (independent of PYTHONHASHSEED)"""
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def seed_everything(seed: int, deterministic: bool = False) -> None:
    """Seed python, numpy and torch; optionally force deterministic kernels"""
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if deterministic:
        # required by cuBLAS for reproducible matmuls
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.use_deterministic_algorithms(True, warn_only=True)
        torch.backends.cudnn.benchmark = False
        torch.backends.cudnn.deterministic = True
        logger.info(f"Deterministic mode on (seed {seed})")
    else:
        logger.debug(f"Seeded RNGs with {seed}")
