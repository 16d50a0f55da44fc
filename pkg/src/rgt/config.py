"""Model configuration and its JSON file form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .attention import ConfigError, RgsaConfig, WindowSpec, recursion_count

SKIP_MODES = ("none", "vanilla", "hai")
MLP_KINDS = ("gated", "plain")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``skip_mode`` selects the connection around each transformer block:
    ``none`` (no outer path), ``vanilla`` (identity skip) or ``hai`` (skip
    scaled by a learned per-channel adaptor). ``hai_enabled`` mirrors
    ``skip_mode == "hai"`` and is derived when omitted.
    """

    n1: int = 6
    n2: int = 6
    dim: int = 180
    heads: int = 6
    mlp_ratio: float = 2.0
    window: WindowSpec = field(default_factory=WindowSpec)
    s_r: int = 4
    h: int = 4
    c_r: float = 0.5
    scale: int = 4
    skip_mode: str = "hai"
    hai_enabled: bool | None = None
    recursion_enabled: bool = True
    min_recursion: int = 0
    mlp: str = "gated"
    recon_feats: int = 64

    def __post_init__(self):
        if isinstance(self.window, (list, tuple)):
            object.__setattr__(self, "window", WindowSpec(*self.window))
        if self.skip_mode not in SKIP_MODES:
            raise ConfigError(f"skip_mode must be one of {SKIP_MODES}, got {self.skip_mode!r}")
        if self.hai_enabled is None:
            object.__setattr__(self, "hai_enabled", self.skip_mode == "hai")
        elif self.hai_enabled != (self.skip_mode == "hai"):
            raise ConfigError(f"hai_enabled={self.hai_enabled} contradicts skip_mode={self.skip_mode!r}")
        if self.n1 < 1 or self.n2 < 2 or self.n2 % 2:
            raise ConfigError(f"need n1 >= 1 and an even n2 >= 2, got n1={self.n1}, n2={self.n2}")
        if self.scale not in (2, 3, 4):
            raise ConfigError(f"scale must be 2, 3 or 4, got {self.scale}")
        if self.heads % 2:
            raise ConfigError(f"heads must be even (split window orientations), got {self.heads}")
        if self.mlp not in MLP_KINDS:
            raise ConfigError(f"mlp must be one of {MLP_KINDS}, got {self.mlp!r}")
        if self.mlp == "gated" and self.hidden_dim % 2:
            raise ConfigError(f"gated MLP needs an even hidden dim, got {self.hidden_dim}")
        if self.hidden_dim < 1 or self.recon_feats < 1:
            raise ConfigError("hidden and reconstruction widths must be positive")
        self.rgsa  # validates the attention geometry

    @property
    def hidden_dim(self) -> int:
        return int(self.dim * self.mlp_ratio)

    @property
    def rgsa(self) -> RgsaConfig:
        return RgsaConfig(
            dim=self.dim,
            heads=self.heads,
            s_r=self.s_r,
            h=self.h,
            c_r=self.c_r,
            min_recursion=self.min_recursion,
            recursion_enabled=self.recursion_enabled,
        )

    @property
    def num_blocks(self) -> int:
        return self.n1 * self.n2

    def block_kinds(self) -> list[str]:
        """Attention type of each block in one residual group; 1-based odd blocks are local."""
        return ["lsa" if i % 2 == 0 else "rgsa" for i in range(self.n2)]

    def variant(self, **changes) -> "ModelConfig":
        """Copy with ``changes`` applied; ``hai_enabled`` is re-derived unless given explicitly."""
        changes.setdefault("hai_enabled", None)
        return replace(self, **changes)

    def inference_view(self, h_test: int = 16, train_patch: int = 64) -> "ModelConfig":
        """Config for evaluation with representative size ``h_test``.

        The shared reduction kernel is never applied fewer times than during
        training on ``train_patch`` crops.
        """
        t_train = recursion_count(train_patch, train_patch, self.s_r, self.h)
        return replace(self, h=h_test, min_recursion=max(self.min_recursion, t_train))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = [self.window.wh, self.window.ww]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        kw = dict(d)
        if "window" in kw:
            win = kw["window"]
            if isinstance(win, dict):
                win = WindowSpec(**win)
            elif isinstance(win, (list, tuple)) and len(win) == 2:
                win = WindowSpec(int(win[0]), int(win[1]))
            else:
                raise ConfigError(f"window must be [wh, ww], got {win!r}")
            kw["window"] = win
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"malformed config JSON: {e}") from e
        if not isinstance(d, dict):
            raise ConfigError("config JSON must be an object")
        return cls.from_dict(d)


def load_config(path: str | Path) -> ModelConfig:
    return ModelConfig.from_json(Path(path).read_text())


RGT_S = ModelConfig()
RGT = ModelConfig(n1=8)
TOY = ModelConfig(n1=1, n2=2, dim=32, heads=2, scale=2, recon_feats=32)
TINY = ModelConfig(n1=1, n2=2, dim=8, heads=2, h=2, scale=2, recon_feats=8)

PRESETS = {"rgt-s": RGT_S, "rgt": RGT, "toy": TOY, "tiny": TINY}
