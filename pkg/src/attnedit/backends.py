"""Name -> factory registries for pluggable backends.

Adapters for pretrained models register themselves here, e.g.::

    from attnedit import backends
    backends.DENOISERS["sd14"] = lambda cfg: MyStableDiffusionAdapter(...)
"""
from __future__ import annotations

from typing import Callable

from .attention import ConstantDenoiser, build_toy_denoiser
from .core import ValidationError
from .metrics import ToyEmbedder
from .pipeline import IdentityCodec

DENOISERS: dict[str, Callable] = {
    "toy": lambda cfg: build_toy_denoiser(cfg.seed, cfg.toy_resolutions, cfg.toy_heads),
    "constant": lambda cfg: ConstantDenoiser(cfg.constant_eps),
}
CODECS: dict[str, Callable] = {
    "identity": lambda cfg: IdentityCodec(),
}
EMBEDDERS: dict[str, Callable] = {
    "toy": lambda cfg: ToyEmbedder(seed=cfg.seed),
}


def _make(registry: dict, what: str, name: str, cfg):
    try:
        factory = registry[name]
    except KeyError:
        raise ValidationError(f"{what}: unknown backend {name!r} (known: {', '.join(sorted(registry))})") from None
    return factory(cfg)


def make_denoiser(cfg):
    return _make(DENOISERS, "denoiser", cfg.denoiser, cfg)


def make_codec(cfg):
    return _make(CODECS, "codec", cfg.codec, cfg)


def make_embedder(cfg):
    return _make(EMBEDDERS, "embedder", cfg.embedder, cfg)
