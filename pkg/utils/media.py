# utils/media.py
import os
from typing import List

import numpy as np
from PIL import Image

from utils.logging_setup import logger

FRAME_PATTERN = "frame_{:04d}.png"


def to_uint8(frames: np.ndarray) -> np.ndarray:
    """Quantize values in [0,1] to uint8"""
    return np.round(np.clip(frames, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_frames(directory: str, frames: np.ndarray) -> List[str]:
    """Write frames [T, H, W] (gray) or [T, H, W, 3] (RGB) as lossless PNG files.

    Float input is expected in [0,1]; uint8 input is written as is.
    """
    os.makedirs(directory, exist_ok=True)
    data = frames if frames.dtype == np.uint8 else to_uint8(frames)
    paths = []
    for t in range(data.shape[0]):
        path = os.path.join(directory, FRAME_PATTERN.format(t))
        Image.fromarray(data[t]).save(path, format="PNG", optimize=False)
        paths.append(path)
    logger.debug(f"Wrote {len(paths)} frames to '{directory}'")
    return paths


def read_frames(directory: str, num_frames: int) -> np.ndarray:
    """Read num_frames grayscale PNG frames into a uint8 array [T, H, W]"""
    frames = []
    for t in range(num_frames):
        path = os.path.join(directory, FRAME_PATTERN.format(t))
        if not os.path.exists(path):
            logger.error(f"Missing frame '{path}'")
            raise FileNotFoundError(f"Missing frame '{path}'")
        with Image.open(path) as img:
            frames.append(np.array(img.convert("L"), dtype=np.uint8))
    return np.stack(frames, axis=0)


def write_gif(path: str, frames: np.ndarray, duration_ms: int = 60) -> str:
    """Write RGB frames [T, H, W, 3] as an animated GIF"""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    data = frames if frames.dtype == np.uint8 else to_uint8(frames)
    images = [Image.fromarray(frame) for frame in data]
    images[0].save(path, format="GIF", save_all=True, append_images=images[1:],
                   duration=duration_ms, loop=0, optimize=False)
    logger.debug(f"Wrote animated overlay '{path}' with {len(images)} frames")
    return path
