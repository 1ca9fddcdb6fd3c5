"""Run configuration: thresholds, option lists, lookup tables, config hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from importlib import resources
from pathlib import Path
from typing import Optional

_DATA = resources.files("editgauge") / "data"


def _load_data_json(name: str):
    return json.loads((_DATA / name).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class RunConfig:
    """All tunable thresholds of the harness with their shipped defaults."""

    # dataset filtering
    min_area_ratio: float = 0.005
    occlusion_min_matches: int = 4
    occlusion_desired_answers: tuple[str, ...] = ("no", "no", "no", "no", "yes", "yes")
    iou_threshold: float = 0.5
    resample_kernel: str = "bilinear"
    output_size: int = 512

    # query generation
    relation_count_threshold: int = 5
    free_space_overlap: float = 0.30
    resize_lo: float = 0.02
    resize_hi: float = 0.25

    # captions
    caption_max_words: int = 60
    caption_retries: int = 8

    # metrics
    size_fidelity_r1: float = 1.5
    size_fidelity_r2: float = 2.0 / 3.0
    crop_compare_size: int = 224
    degrade_factor: int = 4
    canny_low: int = 100
    canny_high: int = 200
    clip_text_mode: str = "qualified"  # or "bare_class"

    # alignment / reporting
    fit_include_iq: bool = True
    bootstrap_resamples: int = 1000

    def to_json(self) -> dict:
        d = asdict(self)
        d["occlusion_desired_answers"] = list(self.occlusion_desired_answers)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        kwargs = dict(d)
        if "occlusion_desired_answers" in kwargs:
            kwargs["occlusion_desired_answers"] = tuple(
                kwargs["occlusion_desired_answers"]
            )
        return cls(**kwargs)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def load_config(path: Optional[str] = None) -> RunConfig:
    """Load a config file (JSON), falling back to shipped defaults."""
    if path is None:
        return RunConfig()
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return RunConfig.from_json(data)


def save_config(config: RunConfig, path) -> None:
    Path(path).write_text(
        json.dumps(config.to_json(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def detector_classes() -> set[str]:
    """Covered detector classes (editable lookup shipped with the repo)."""
    return set(_load_data_json("detector_classes.json"))


def attribute_category_table() -> dict[str, str]:
    """Freeform attribute word -> category lookup (unmapped words are ignored)."""
    return dict(_load_data_json("attribute_categories.json"))


def state_pair_table() -> dict[str, list[str]]:
    """Allowed replacement states per state word."""
    return {k: list(v) for k, v in _load_data_json("state_pairs.json").items()}


def class_group_table() -> dict[str, str]:
    """Detector class -> report group (Person/Animal/Vehicle/...)."""
    return dict(_load_data_json("class_groups.json"))


def default_weights_path() -> Path:
    import editgauge

    return Path(editgauge.__file__).parent / "data" / "default_weights.json"


def template_dir() -> Path:
    import editgauge

    return Path(editgauge.__file__).parent / "data" / "templates"
