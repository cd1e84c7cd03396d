"""Temporal consistency and frame-wise edit accuracy over embeddings."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .control import resize
from .core import ValidationError

UNIT_TOL = 1e-5


class EmbedderBackend(Protocol):
    name: str

    def embed_image(self, frame: np.ndarray) -> np.ndarray: ...

    def embed_text(self, text: str) -> np.ndarray: ...


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).ravel()
    n = np.linalg.norm(v)
    if n == 0:
        raise ValidationError("cannot normalize a zero embedding")
    return v / n


class ToyEmbedder:
    """Downsampled-pixel image embedding and hashed text embedding.

    Images: bilinear resize to ``size`` x ``size`` per channel, flatten,
    L2-normalize. Text: a seeded Gaussian vector keyed on the string.
    The two live in the same space only formally.
    """

    name = "toy"

    def __init__(self, size: int = 16, channels: int = 3, seed: int = 0):
        self.size = size
        self.channels = channels
        self.seed = seed

    @property
    def dim(self) -> int:
        return self.size * self.size * self.channels

    def embed_image(self, frame: np.ndarray) -> np.ndarray:
        x = np.asarray(frame, dtype=np.float64)
        if x.ndim == 2:
            x = x[..., None]
        if x.shape[-1] != self.channels:
            raise ValidationError(f"expected {self.channels}-channel frame, got {x.shape}")
        small = resize(x.transpose(2, 0, 1), (self.size, self.size))
        return _unit(small)

    def embed_text(self, text: str) -> np.ndarray:
        key = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "little")
        return _unit(np.random.default_rng([self.seed, key]).standard_normal(self.dim))


def tem_con_from_embeddings(emb: np.ndarray) -> float:
    emb = np.asarray(emb, dtype=np.float64)
    if emb.ndim != 2 or emb.shape[0] < 2:
        raise ValidationError("temporal consistency needs at least 2 frames")
    emb = emb / np.linalg.norm(emb, axis=1, keepdims=True)
    return float(np.mean(np.sum(emb[:-1] * emb[1:], axis=1)))


def frame_wins(img_emb: np.ndarray, src_emb: np.ndarray, edit_emb: np.ndarray) -> np.ndarray:
    """Per-frame win flags; a tie is a loss."""
    img = np.asarray(img_emb, dtype=np.float64)
    img = img / np.linalg.norm(img, axis=1, keepdims=True)
    return img @ _unit(edit_emb) > img @ _unit(src_emb)


def frame_acc_from_embeddings(img_emb: np.ndarray, src_emb: np.ndarray, edit_emb: np.ndarray) -> float:
    img = np.asarray(img_emb, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 1:
        raise ValidationError("frame accuracy needs at least 1 frame")
    wins = frame_wins(img, src_emb, edit_emb)
    return int(wins.sum()) / wins.size


def tem_con(frames: Sequence[np.ndarray], embedder: EmbedderBackend) -> float:
    """Mean cosine similarity of consecutive frame embeddings."""
    if len(frames) < 2:
        raise ValidationError("temporal consistency needs at least 2 frames")
    return tem_con_from_embeddings(np.stack([embedder.embed_image(f) for f in frames]))


def frame_acc(frames: Sequence[np.ndarray], src_prompt: str, edit_prompt: str, embedder: EmbedderBackend) -> float:
    """Fraction of frames strictly closer to the edit prompt than the source prompt."""
    if src_prompt == edit_prompt:
        raise ValidationError("frame accuracy is undefined for identical prompts")
    if len(frames) < 1:
        raise ValidationError("frame accuracy needs at least 1 frame")
    img = np.stack([embedder.embed_image(f) for f in frames])
    return frame_acc_from_embeddings(img, embedder.embed_text(src_prompt), embedder.embed_text(edit_prompt))


@dataclass
class EvalReport:
    name: str
    tem_con: float | None
    frame_acc: float
    rows: list[dict] = field(default_factory=list)
    embedder: str = ""


def evaluate(name: str, frames: Sequence[np.ndarray], src_prompt: str, edit_prompt: str,
             embedder: EmbedderBackend) -> EvalReport:
    """Both metrics plus per-frame rows; ``tem_con`` is None for a single frame."""
    if len(frames) < 1:
        raise ValidationError(f"{name}: no frames")
    if src_prompt == edit_prompt:
        raise ValidationError("frame accuracy is undefined for identical prompts")
    img = np.stack([embedder.embed_image(f) for f in frames])
    src, edit = embedder.embed_text(src_prompt), embedder.embed_text(edit_prompt)
    wins = frame_wins(img, src, edit)
    rows = [
        {"frame": i, "sim_src": float(img[i] @ src), "sim_edit": float(img[i] @ edit), "win": bool(wins[i])}
        for i in range(len(frames))
    ]
    tc = tem_con_from_embeddings(img) if len(frames) >= 2 else None
    return EvalReport(name, tc, int(wins.sum()) / wins.size, rows, getattr(embedder, "name", type(embedder).__name__))


def format_report(reports: Sequence[EvalReport]) -> str:
    """Tab-separated table: header plus one row per video, 4 decimals."""
    lines = ["name\ttem_con\tframe_acc"]
    for r in reports:
        tc = "NA" if r.tem_con is None else f"{r.tem_con:.4f}"
        lines.append(f"{r.name}\t{tc}\t{r.frame_acc:.4f}")
    return "\n".join(lines) + "\n"
