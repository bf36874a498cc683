"""Parameter containers for every pipeline stage.

All containers are frozen dataclasses. ``PipelineConfig`` groups them and
knows how to apply flat ``key=value`` overrides, which is the format used by
``--config`` files on the command line.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError


@dataclass(frozen=True)
class KalmanParams:
    std_weight_position: float = 1.0 / 20
    std_weight_velocity: float = 1.0 / 160
    gating_threshold: float = 9.4877  # chi2 0.95 quantile, 4 dof
    nsa: bool = True  # confidence-adaptive measurement noise
    delta_t: int = 3
    history_len: int = 30

    def __post_init__(self):
        if self.std_weight_position <= 0 or self.std_weight_velocity <= 0:
            raise ConfigError("Kalman std weights must be positive")
        if self.delta_t < 1 or self.history_len < 2:
            raise ConfigError("delta_t must be >= 1 and history_len >= 2")


@dataclass(frozen=True)
class AssociationWeights:
    w_iou: float = 1.0
    w_app: float = 1.0
    w_vel: float = 0.2

    def __post_init__(self):
        if min(self.w_iou, self.w_app, self.w_vel) < 0:
            raise ConfigError("association weights must be non-negative")
        if max(self.w_iou, self.w_app, self.w_vel) <= 0:
            raise ConfigError("at least one association weight must be positive")


@dataclass(frozen=True)
class TrackerParams:
    n_init: int = 3
    max_age: int = 30
    match_threshold: float = 0.7
    ema_alpha_base: float = 0.9
    det_min_conf: float = 0.1
    cmc: bool = True
    backfill: bool = True
    covariance_cap: float = 10.0

    def __post_init__(self):
        if self.n_init < 1 or self.max_age < 1:
            raise ConfigError("n_init and max_age must be >= 1")
        if not 0.0 <= self.ema_alpha_base <= 1.0:
            raise ConfigError("ema_alpha_base must lie in [0, 1]")
        if not 0.0 <= self.det_min_conf <= 1.0:
            raise ConfigError("det_min_conf must lie in [0, 1]")
        if self.match_threshold <= 0:
            raise ConfigError("match_threshold must be positive")


@dataclass(frozen=True)
class MergeConfig:
    """Thresholds for the offline refinement stages.

    Pixel-valued fields are tuned for 1080-pixel-high footage; use
    :meth:`scaled` to adapt them to another resolution.
    """

    boundary_margin: float = 50.0
    max_gap_frames: int = 60
    sim_threshold: float = 0.6
    sim_fraction: float = 0.7
    link_max_gap: int = 30
    link_max_dist: float = 75.0
    link_window: int = 10
    gsi_tau: float = 10.0
    gsi_max_gap: int = 20
    gsi_noise_var: float = 1.0

    def __post_init__(self):
        if self.boundary_margin < 0 or self.link_max_dist <= 0:
            raise ConfigError("pixel thresholds must be non-negative")
        if min(self.max_gap_frames, self.link_max_gap, self.gsi_max_gap, self.link_window) < 1:
            raise ConfigError("frame thresholds must be >= 1")
        if not -1.0 < self.sim_threshold < 1.0:
            raise ConfigError("sim_threshold must lie in (-1, 1)")
        if not 0.0 < self.sim_fraction <= 1.0:
            raise ConfigError("sim_fraction must lie in (0, 1]")
        if self.gsi_tau <= 0 or self.gsi_noise_var <= 0:
            raise ConfigError("gsi_tau and gsi_noise_var must be positive")

    def scaled(self, image_height: float, reference_height: float = 1080.0) -> "MergeConfig":
        k = float(image_height) / reference_height
        if k == 1.0:
            return self
        return replace(
            self,
            boundary_margin=self.boundary_margin * k,
            link_max_dist=self.link_max_dist * k,
        )


@dataclass(frozen=True)
class BallParams:
    ball_min_conf: float = 0.05
    ball_window: int = 51
    ball_poly_order: int = 3
    ball_max_dist: float = 100.0
    # 0 = one plain smoothing pass; otherwise outlier-rejection refits
    ball_refit_rounds: int = 20

    def __post_init__(self):
        if not 0.0 <= self.ball_min_conf <= 1.0:
            raise ConfigError("ball_min_conf must lie in [0, 1]")
        if self.ball_poly_order < 0:
            raise ConfigError("ball_poly_order must be >= 0")
        if self.ball_window % 2 != 1 or self.ball_window < self.ball_poly_order + 1:
            raise ConfigError("ball_window must be odd and >= ball_poly_order + 1")
        if self.ball_max_dist <= 0:
            raise ConfigError("ball_max_dist must be positive")
        if self.ball_refit_rounds < 0:
            raise ConfigError("ball_refit_rounds must be >= 0")


@dataclass(frozen=True)
class PipelineConfig:
    image_width: int = 1920
    image_height: int = 1080
    embedding_dim: int = 512
    ball: BallParams = field(default_factory=BallParams)
    kalman: KalmanParams = field(default_factory=KalmanParams)
    weights: AssociationWeights = field(default_factory=AssociationWeights)
    tracker: TrackerParams = field(default_factory=TrackerParams)
    merge: MergeConfig = field(default_factory=MergeConfig)

    def __post_init__(self):
        if self.image_width <= 0 or self.image_height <= 0:
            raise ConfigError("image dimensions must be positive")
        if self.embedding_dim < 1:
            raise ConfigError("embedding_dim must be >= 1")

    # convenience accessors mirroring the flat key names
    @property
    def ball_min_conf(self) -> float:
        return self.ball.ball_min_conf

    @property
    def ball_window(self) -> int:
        return self.ball.ball_window

    @property
    def ball_poly_order(self) -> int:
        return self.ball.ball_poly_order

    @property
    def ball_max_dist(self) -> float:
        return self.ball.ball_max_dist

    def with_overrides(self, values: Mapping[str, Any]) -> "PipelineConfig":
        """Return a copy with flat ``key -> value`` overrides applied.

        Keys are field names of this class or of any nested parameter group
        (``n_init``, ``w_app``, ``ball_window`` ...). Values may be strings;
        they are coerced to the field's type.
        """
        top: dict[str, Any] = {}
        nested: dict[str, dict[str, Any]] = {}
        groups = _nested_groups()
        for key, raw in values.items():
            key = key.strip().replace("-", "_")
            if key in _TOP_LEVEL:
                top[key] = _coerce(raw, _TOP_LEVEL[key], key)
                continue
            for group, group_fields in groups.items():
                if key in group_fields:
                    nested.setdefault(group, {})[key] = _coerce(raw, group_fields[key], key)
                    break
            else:
                raise ConfigError(f"unknown configuration key: {key!r}")
        for group, changes in nested.items():
            top[group] = replace(getattr(self, group), **changes)
        return replace(self, **top)

    def flat(self) -> dict[str, Any]:
        out: dict[str, Any] = {k: getattr(self, k) for k in _TOP_LEVEL}
        for group in _nested_groups():
            out.update(dataclasses.asdict(getattr(self, group)))
        return out


_NESTED = {
    "ball": BallParams,
    "kalman": KalmanParams,
    "weights": AssociationWeights,
    "tracker": TrackerParams,
    "merge": MergeConfig,
}
_TOP_LEVEL = {"image_width": int, "image_height": int, "embedding_dim": int}


def _nested_groups() -> dict[str, dict[str, type]]:
    out = {}
    for name, cls in _NESTED.items():
        defaults = cls()
        out[name] = {f.name: type(getattr(defaults, f.name)) for f in fields(cls)}
    return out


def _coerce(raw: Any, typ: type, key: str) -> Any:
    if not isinstance(raw, str):
        if typ is int and isinstance(raw, float) and not raw.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {raw!r}")
        return typ(raw)
    text = raw.strip()
    try:
        if typ is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        return typ(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None


def read_kv_file(path: str | Path) -> dict[str, str]:
    """Read a ``key=value`` file. Blank lines and ``#`` comments are skipped."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"{path}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def load_config(path: str | Path | None = None, **overrides: Any) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        cfg = cfg.with_overrides(read_kv_file(path))
    if overrides:
        cfg = cfg.with_overrides(overrides)
    return cfg
