"""Pipeline configuration: TOML file sections with HAZARDPIPE_ env overrides."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

ENV_PREFIX = "HAZARDPIPE_"


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    data_dir: str = "./data"


@dataclass
class IngestionConfig:
    max_payload_mb: float = 20.0
    dedup_threshold: int = 4
    salt: str = "change-me-in-deployment"
    # EXIF geotag wins over the declared one when they disagree by more than this.
    geo_disagreement_km: float = 1.0


@dataclass
class ValidationConfig:
    quorum: int = 3
    tau_hi: float = 0.7
    tau_lo: float = 0.3
    eta: float = 0.05
    uncertainty_escalation: float = 0.6
    rural_boost: float = 1.0
    credibility_floor: float = 0.1
    credibility_ceiling: float = 1.0
    credibility_initial: float = 0.5


@dataclass
class GeoConfig:
    lat_min: float = 39.20
    lat_max: float = 40.00
    lon_min: float = 2.30
    lon_max: float = 3.50
    resolution_m: float = 250.0
    kernel_radius: int = 1
    site_threshold: float = 3.0


@dataclass
class DetectorConfig:
    backend: str = "mock"
    command: str = ""
    confidence_threshold: float = 0.5


@dataclass
class ExplainConfig:
    lime_rows: int = 6
    lime_cols: int = 6
    lime_samples: int = 1000
    kernel_width: float = 0.25
    ridge_lambda: float = 1e-3
    workers: int = 2
    overlay_alpha: float = 0.4


@dataclass
class ReportingConfig:
    severity_high: int = 10
    severity_medium: int = 3
    backend_url: str = ""
    backend_timeout_s: float = 10.0
    language: str = "en"


@dataclass
class OrchestratorConfig:
    min_feedback_records: int = 50
    recalibrate_every: int = 100
    baseline_manual_latency_s: float = 36000.0  # 10 h manual reporting cycle


@dataclass
class SimulationConfig:
    n_images: int = 1000
    n_sites: int = 50
    n_validators: int = 252
    # Population accuracy calibrated so the default scenario reproduces the
    # pilot agreement figure; see sim/validators.py.
    accuracy_mean: float = 0.553
    accuracy_sd: float = 0.05
    miss_rate: float = 0.403
    false_positive_rate: float = 0.171
    localization_jitter_px: float = 3.0
    seed: int = 20240601


@dataclass
class PipelineConfig:
    server: ServerConfig = field(default_factory=ServerConfig)
    ingestion: IngestionConfig = field(default_factory=IngestionConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    geo: GeoConfig = field(default_factory=GeoConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    reporting: ReportingConfig = field(default_factory=ReportingConfig)
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)


def _coerce(raw: str, like):
    if isinstance(like, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _apply_section(section_cfg, values: dict, section_name: str):
    known = {f.name: f for f in fields(section_cfg)}
    for key, value in values.items():
        if key not in known:
            raise KeyError(f"unknown config key [{section_name}].{key}")
        setattr(section_cfg, key, value)


def _apply_env(cfg: PipelineConfig, environ) -> None:
    for section_field in fields(cfg):
        section = getattr(cfg, section_field.name)
        for f in fields(section):
            env_key = f"{ENV_PREFIX}{section_field.name.upper()}_{f.name.upper()}"
            if env_key in environ:
                setattr(section, f.name, _coerce(environ[env_key], getattr(section, f.name)))


def load_config(path: Optional[str | Path] = None, environ=None) -> PipelineConfig:
    """Build config from defaults, then a TOML file, then env overrides."""
    cfg = PipelineConfig()
    if path is not None:
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        for section_name, values in data.items():
            if not hasattr(cfg, section_name):
                raise KeyError(f"unknown config section [{section_name}]")
            _apply_section(getattr(cfg, section_name), values, section_name)
    _apply_env(cfg, os.environ if environ is None else environ)
    return cfg


def config_to_dict(cfg: PipelineConfig) -> dict:
    return dataclasses.asdict(cfg)
