"""Job configuration: an INI-style file with one section per concern."""
from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .core import ValidationError
from .core.schedule import DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS

# field -> (section, help)
_LAYOUT = {
    "source_prompt": ("prompts", "prompt describing the input video"),
    "edit_prompt": ("prompts", "prompt describing the wanted result; same wording except the edited words"),
    "edit_words": ("prompts", "comma-separated 'source->edit' word pairs"),
    "steps": ("schedule", "number of DDIM steps T (default 30)"),
    "beta_start": ("schedule", "first beta of the linear schedule"),
    "beta_end": ("schedule", "last beta of the linear schedule"),
    "train_steps": ("schedule", "if set, subsample T steps from a scaled-linear schedule of this length"),
    "enable_cross": ("control", "swap edited-word cross-attention maps into the stored source maps"),
    "enable_spatial": ("control", "relax spatial-temporal attention inside the 0.5-threshold mask (needs enable_cross)"),
    "probe_mode": ("control", "'separate': probe pass follows its own trajectory; 'shared': it reuses the edited one"),
    "window_size": ("pipeline", "frames per independently edited window (default 8, no overlap)"),
    "max_frames": ("pipeline", "upper limit on input frames (default 64)"),
    "jobs": ("pipeline", "windows edited in parallel"),
    "seed": ("run", "seed for backend weights and embeddings"),
    "denoiser": ("backends", "denoiser backend name"),
    "codec": ("backends", "codec backend name"),
    "embedder": ("backends", "embedder backend name"),
    "toy_resolutions": ("backends", "toy denoiser block grids, e.g. '8,4'"),
    "toy_heads": ("backends", "toy denoiser attention heads"),
    "constant_eps": ("backends", "eps value of the constant denoiser"),
    "input_dir": ("paths", "directory of frame_%05d.png input frames"),
    "output_dir": ("paths", "directory for edited frames and diagnostics"),
    "store_dir": ("paths", "directory for cached inversions (zT + attention store per window)"),
}


def parse_edit_words(text: str) -> list[tuple[str, str]]:
    pairs = []
    for item in (s.strip() for s in text.split(",")):
        if not item:
            continue
        if item.count("->") != 1:
            raise ValidationError(f"edit_words: expected 'source->edit', got {item!r}")
        src, edit = (w.strip() for w in item.split("->"))
        if not src or not edit:
            raise ValidationError(f"edit_words: empty word in {item!r}")
        pairs.append((src, edit))
    return pairs


def format_edit_words(pairs) -> str:
    return ", ".join(f"{s}->{e}" for s, e in pairs)


def _parse_bool(name: str, value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"{name}: expected a boolean, got {value!r}")


@dataclass
class JobConfig:
    source_prompt: str = ""
    edit_prompt: str = ""
    edit_words: list[tuple[str, str]] = field(default_factory=list)
    steps: int = DEFAULT_STEPS
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    train_steps: int | None = None
    enable_cross: bool = True
    enable_spatial: bool = True
    probe_mode: str = "separate"
    window_size: int = 8
    max_frames: int = 64
    jobs: int = 1
    seed: int = 0
    denoiser: str = "toy"
    codec: str = "identity"
    embedder: str = "toy"
    toy_resolutions: tuple[int, ...] = (8, 4)
    toy_heads: int = 2
    constant_eps: float = 0.0
    input_dir: str = ""
    output_dir: str = ""
    store_dir: str = ""

    def validate(self, need_prompts: bool = True, need_edit: bool = True) -> "JobConfig":
        if not isinstance(self.steps, int) or self.steps < 1:
            raise ValidationError(f"steps: must be a positive integer, got {self.steps!r}")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise ValidationError("beta_start/beta_end: need 0 < beta_start <= beta_end < 1")
        if self.train_steps is not None and self.train_steps < self.steps:
            raise ValidationError("train_steps: must be >= steps")
        if self.window_size < 1:
            raise ValidationError("window_size: must be >= 1")
        if self.max_frames < 1:
            raise ValidationError("max_frames: must be >= 1")
        if self.jobs < 1:
            raise ValidationError("jobs: must be >= 1")
        if self.probe_mode not in ("separate", "shared"):
            raise ValidationError("probe_mode: must be 'separate' or 'shared'")
        if self.enable_spatial and not self.enable_cross:
            raise ValidationError("enable_spatial: requires enable_cross")
        if need_prompts and not self.source_prompt.strip():
            raise ValidationError("source_prompt: must be set")
        if need_edit:
            if not self.edit_prompt.strip():
                raise ValidationError("edit_prompt: must be set")
            if self.enable_spatial and not self.edit_words:
                raise ValidationError("edit_words: enable_spatial needs at least one word pair")
        if not self.toy_resolutions or any(r < 1 for r in self.toy_resolutions):
            raise ValidationError("toy_resolutions: must be positive integers")
        return self

    # -- text form ---------------------------------------------------------

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser(interpolation=None)
        for f in fields(self):
            section = _LAYOUT[f.name][0]
            if not cp.has_section(section):
                cp.add_section(section)
            value = getattr(self, f.name)
            if f.name == "edit_words":
                text = format_edit_words(value)
            elif f.name == "toy_resolutions":
                text = ",".join(str(r) for r in value)
            elif value is None:
                text = ""
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            cp.set(section, f.name, text)
        return cp

    def to_string(self) -> str:
        buf = io.StringIO()
        self.to_parser().write(buf)
        return buf.getvalue()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_string(), encoding="utf-8")

    @classmethod
    def from_string(cls, text: str) -> "JobConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ValidationError(f"config: {exc}") from None
        values = {}
        for section in cp.sections():
            for key, raw in cp.items(section):
                values[key] = raw
        return cls.from_mapping(values)

    @classmethod
    def from_file(cls, path: str | Path) -> "JobConfig":
        return cls.from_string(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_mapping(cls, values: dict) -> "JobConfig":
        cfg = cls()
        types = {f.name: f.type for f in fields(cls)}
        for key, raw in values.items():
            if key not in types:
                raise ValidationError(f"{key}: unknown config key")
            if raw is None:
                continue
            setattr(cfg, key, _coerce(key, raw, getattr(cfg, key)))
        return cfg

    def as_dict(self) -> dict:
        return asdict(self)


def _coerce(key: str, raw, default):
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if key == "edit_words":
            return parse_edit_words(raw)
        if key == "toy_resolutions":
            return tuple(int(r) for r in raw.split(",") if r.strip())
        if key == "train_steps":
            return int(raw) if raw else None
        if isinstance(default, bool):
            return _parse_bool(key, raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ValidationError(f"{key}: cannot parse {raw!r}") from None
    return raw


def config_help() -> str:
    lines = []
    for name, (section, text) in _LAYOUT.items():
        lines.append(f"  [{section}] {name}: {text}")
    return "\n".join(lines)
