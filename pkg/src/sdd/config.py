"""Engine configuration: flat key/value files plus flag overrides.

Recognized keys (all optional):

    weights.dn / weights.dr / weights.sr   stage weight bundle paths
    pp.weights                             provider-b SPP network bundle
    model.size                             auto | default | toy
    stages                                 1..4
    mode                                   offline | streaming | streaming-offline-stats
    seed                                   integer
    pp.provider                            a | b
    pp.alpha_npsd pp.alpha_dd pp.gain_floor pp.spp_smooth
    pp.pitch_q_min pp.pitch_q_max pp.pitch_factor
    pp.highq_cut pp.highq_factor
    pp.npsd_growth_cap pp.ms_factor pp.ms_window pp.ms_smooth

Values from flags override values from the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields

from .errors import ConfigError
from .nn.model import ModelConfig, StageKind, default_config, toy_config
from .nn.weights import read_weights_file
from .pipeline import Engine
from .postproc import PpParams

_PP_KEYS = {
    "pp.alpha_npsd": ("alpha_npsd", float),
    "pp.alpha_dd": ("alpha_dd", float),
    "pp.gain_floor": ("gain_floor", float),
    "pp.spp_smooth": ("spp_smooth", float),
    "pp.pitch_q_min": ("pitch_q_min", int),
    "pp.pitch_q_max": ("pitch_q_max", int),
    "pp.pitch_factor": ("pitch_factor", float),
    "pp.highq_cut": ("highq_cut", int),
    "pp.highq_factor": ("highq_factor", float),
    "pp.npsd_growth_cap": ("npsd_growth_cap", float),
    "pp.ms_factor": ("ms_factor", float),
    "pp.ms_window": ("ms_window", int),
    "pp.ms_smooth": ("ms_smooth", float),
    "pp.provider": ("provider", str),
}

_TOP_KEYS = {"weights.dn", "weights.dr", "weights.sr", "pp.weights",
             "model.size", "stages", "mode", "seed"}


def parse_config_file(path) -> dict[str, str]:
    values: dict[str, str] = {}
    try:
        with open(path) as f:
            for lineno, raw in enumerate(f, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = line.partition("=")
                key = key.strip()
                value = value.strip()
                if key not in _TOP_KEYS and key not in _PP_KEYS:
                    raise ConfigError(f"{path}:{lineno}: unknown key '{key}'")
                values[key] = value
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    return values


@dataclass
class EngineConfig:
    weight_paths: dict[StageKind, str] = field(default_factory=dict)
    pp_weights_path: str | None = None
    model_size: str = "auto"
    stages: int = 4
    mode: str = "offline"
    seed: int = 0
    pp_values: dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_sources(cls, file_values: dict[str, str] | None = None,
                     overrides: dict[str, str] | None = None) -> "EngineConfig":
        merged: dict[str, str] = {}
        merged.update(file_values or {})
        merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
        cfg = cls()
        for key, value in merged.items():
            if key == "weights.dn":
                cfg.weight_paths[StageKind.DENOISE] = value
            elif key == "weights.dr":
                cfg.weight_paths[StageKind.DEREVERB] = value
            elif key == "weights.sr":
                cfg.weight_paths[StageKind.REFINE] = value
            elif key == "pp.weights":
                cfg.pp_weights_path = value
            elif key == "model.size":
                if value not in ("auto", "default", "toy"):
                    raise ConfigError(f"model.size must be auto/default/toy, got '{value}'")
                cfg.model_size = value
            elif key == "stages":
                cfg.stages = _to_int(key, value)
                if not 1 <= cfg.stages <= 4:
                    raise ConfigError(f"stages must be 1..4, got {cfg.stages}")
            elif key == "mode":
                if value not in ("offline", "streaming", "streaming-offline-stats"):
                    raise ConfigError(f"unknown mode '{value}'")
                cfg.mode = value
            elif key == "seed":
                cfg.seed = _to_int(key, value)
            elif key in _PP_KEYS:
                name, cast = _PP_KEYS[key]
                try:
                    cfg.pp_values[name] = cast(value)
                except ValueError as e:
                    raise ConfigError(f"bad value for {key}: {value}") from e
            else:
                raise ConfigError(f"unknown config key '{key}'")
        return cfg

    def pp_params(self) -> PpParams:
        valid = {f.name for f in dc_fields(PpParams)}
        extra = set(self.pp_values) - valid
        if extra:
            raise ConfigError(f"unknown PpParams fields: {sorted(extra)}")
        return PpParams(**self.pp_values)


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as e:
        raise ConfigError(f"bad integer for {key}: {value}") from e


def _config_for_bundle(bundle, kind: StageKind, size: str) -> ModelConfig:
    if size == "default":
        return default_config(kind)
    if size == "toy":
        return toy_config(kind)
    for candidate in (default_config(kind), toy_config(kind)):
        try:
            bundle.validate_against(candidate.tensor_spec())
            return candidate
        except Exception:
            continue
    raise ConfigError(
        f"bundle for stage '{kind.value}' matches neither the default nor the toy topology")


def build_engine(cfg: EngineConfig) -> Engine:
    configs: dict[StageKind, ModelConfig] = {}
    bundles = {}
    for kind in StageKind:
        configs[kind] = default_config(kind) if cfg.model_size != "toy" else toy_config(kind)
    for kind, path in cfg.weight_paths.items():
        bundle = read_weights_file(path)
        configs[kind] = _config_for_bundle(bundle, kind, cfg.model_size)
        bundles[kind] = bundle
    pp_bundle = None
    if cfg.pp_weights_path:
        pp_bundle = read_weights_file(cfg.pp_weights_path)
    return Engine(configs=configs, bundles=bundles, pp_params=cfg.pp_params(),
                  spp_bundle=pp_bundle)
