"""Numbered PNG frame directories and PGM mask dumps."""
from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

FRAME_PATTERN = "frame_{:05d}.png"
_FRAME_RE = re.compile(r"^frame_(\d{5})\.png$")


def list_frames(directory: str | Path) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"frame directory {d} does not exist")
    found = sorted((int(m.group(1)), p) for p in d.iterdir() if (m := _FRAME_RE.match(p.name)))
    return [p for _, p in found]


def read_frames(directory: str | Path) -> np.ndarray:
    """All ``frame_%05d.png`` files in index order as uint8 (K, H, W, 3)."""
    paths = list_frames(directory)
    if not paths:
        raise FileNotFoundError(f"no frame_*.png files in {directory}")
    frames = []
    for p in paths:
        with Image.open(p) as im:
            frames.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
    if len({f.shape for f in frames}) != 1:
        raise OSError(f"frames in {directory} differ in size")
    return np.stack(frames)


def write_frames(directory: str | Path, frames: np.ndarray, start: int = 0) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = []
    for i, f in enumerate(np.asarray(frames, dtype=np.uint8)):
        p = d / FRAME_PATTERN.format(start + i)
        Image.fromarray(f).save(p, optimize=False)
        out.append(p)
    return out


def write_pgm(path: str | Path, img: np.ndarray) -> None:
    """8-bit binary PGM (P5)."""
    arr = np.asarray(img, dtype=np.uint8)
    if arr.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.uint8)
