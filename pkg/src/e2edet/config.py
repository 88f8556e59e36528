"""Run configuration and its flat ``key = value`` text format.

One setting per line, ``section.field = value``. Blank lines and lines
starting with ``#`` are ignored. Booleans are ``true``/``false``, an
unbounded NMS window is ``inf``, and lists are comma-separated. Keys not
listed in ``RunConfig.keys()`` are rejected. Saving and reloading a config
reproduces it exactly, so a saved file replays a run.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from .assign_rules import RULES
from .nms import NmsConfig
from .pyramid import FilterParams
from .quality import QualityParams
from .sim import OracleConfig, SceneConfig

SECTIONS = {"quality": QualityParams, "filter": FilterParams, "nms": NmsConfig,
            "scene": SceneConfig, "oracle": OracleConfig, "ms_oracle": OracleConfig}

# seeds are derived from RunConfig.seed, not set per section
_DERIVED = {"seed"}


def _ms_default() -> OracleConfig:
    return OracleConfig(duplicates=5, spread=2, leak=0.3)


@dataclass(frozen=True)
class RunConfig:
    """Everything ``simulate`` needs.

    ``oracle`` drives the assignment-rule study; ``ms_oracle`` is the
    multi-scale duplicate oracle used by the NMS range study. Scene, oracle
    and multi-scale oracle seeds are ``seed``, ``seed + 1`` and ``seed + 2``.
    """

    seed: int = 0
    n_images: int = 200
    heatmap_images: int = 2
    rules: Tuple[str, ...] = tuple(RULES)
    quality: QualityParams = QualityParams()
    filter: FilterParams = FilterParams()
    nms: NmsConfig = NmsConfig()
    scene: SceneConfig = SceneConfig()
    oracle: OracleConfig = OracleConfig()
    ms_oracle: OracleConfig = field(default_factory=_ms_default)

    def __post_init__(self):
        if self.n_images < 0 or self.heatmap_images < 0:
            raise ValueError("n_images and heatmap_images must be non-negative")
        unknown = [r for r in self.rules if r not in RULES]
        if unknown:
            raise ValueError(f"unknown rule {unknown[0]!r}; choose from {', '.join(RULES)}")

    def scene_config(self) -> SceneConfig:
        return dataclasses.replace(self.scene, seed=self.seed)

    def oracle_config(self) -> OracleConfig:
        return dataclasses.replace(self.oracle, seed=self.seed + 1)

    def ms_oracle_config(self) -> OracleConfig:
        return dataclasses.replace(self.ms_oracle, seed=self.seed + 2)

    # -- flat view --------------------------------------------------------

    def flat(self) -> Dict[str, object]:
        out: Dict[str, object] = {"seed": self.seed, "n_images": self.n_images,
                                  "heatmap_images": self.heatmap_images, "rules": self.rules}
        for name in SECTIONS:
            section = getattr(self, name)
            for f in dataclasses.fields(section):
                if f.name not in _DERIVED:
                    out[f"{name}.{f.name}"] = getattr(section, f.name)
        return out

    @classmethod
    def keys(cls) -> List[str]:
        return list(cls().flat())

    def with_values(self, values: Dict[str, str]) -> "RunConfig":
        """Apply textual overrides, validating every key and value."""
        current = self.flat()
        top: Dict[str, object] = {}
        sections: Dict[str, Dict[str, object]] = {}
        for key, text in values.items():
            if key not in current:
                raise ValueError(f"unknown config key {key!r}")
            value = _parse_value(key, text, current[key])
            if "." in key:
                sec, name = key.split(".", 1)
                sections.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, changes in sections.items():
            try:
                top[sec] = dataclasses.replace(getattr(self, sec), **changes)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"invalid [{sec}] settings: {exc}") from None
        return dataclasses.replace(self, **top)

    def dumps(self) -> str:
        lines = ["# e2edet run configuration"]
        lines += [f"{k} = {_format_value(v)}" for k, v in self.flat().items()]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        return cls().with_values(parse_flat(text))


def parse_flat(text: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ValueError(f"config line {n}: duplicate key {key!r}")
        values[key] = value
    return values


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "inf"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse_value(key: str, text: str, like):
    try:
        if isinstance(like, bool):
            if text.lower() not in ("true", "false"):
                raise ValueError
            return text.lower() == "true"
        if key == "nms.spatial_range":
            return None if text.lower() in ("inf", "none") else int(text)
        if isinstance(like, tuple):
            return tuple(p.strip() for p in text.split(",") if p.strip())
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        return text
    except ValueError:
        raise ValueError(f"bad value {text!r} for config key {key!r}") from None
