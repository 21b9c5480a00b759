"""Frame files on disk: ``frame_%06d.pgm`` / ``frame_%06d.png``."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InputError
from .imgproc import to_grayscale

FRAME_RE = re.compile(r"^frame_(\d+)\.(pgm|png)$", re.IGNORECASE)


def frame_name(index: int, ext: str = "pgm") -> str:
    return f"frame_{index:06d}.{ext}"


def list_frames(directory) -> list[tuple[int, Path]]:
    """``(index, path)`` for every frame file in ``directory``, sorted by index."""
    directory = Path(directory)
    if not directory.is_dir():
        raise InputError(f"input directory not found: {directory}")
    found = {}
    for path in directory.iterdir():
        m = FRAME_RE.match(path.name)
        if m:
            idx = int(m.group(1))
            if idx in found:
                raise InputError(f"duplicate frame index {idx}: {found[idx]} and {path}")
            found[idx] = path
    if not found:
        raise InputError(f"no frame_NNNNNN.pgm|png files in {directory}")
    return sorted(found.items())


def read_frame(path) -> np.ndarray:
    """Load a frame as an 8-bit gray array (RGB input goes through BT.601)."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("L", "P") or im.mode.startswith("I"):
                arr = np.asarray(im.convert("L") if im.mode == "P" else im)
            else:
                arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read frame {path}: {exc}") from exc
    if arr.dtype != np.uint8:
        if arr.max(initial=0) > 255:
            raise InputError(f"{path}: only 8-bit frames are supported")
        arr = arr.astype(np.uint8)
    return to_grayscale(arr)


def write_frame(path, img: np.ndarray) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)
