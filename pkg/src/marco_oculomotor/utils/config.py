#!/usr/bin/env python3
"""
Configuración Global - Marco Oculomotor
=======================================

Gestiona la configuración tipada del proyecto: arquitectura del modelo,
pre-entrenamiento, aumentos de datos, corpus sintético, evaluación y logging.

La configuración se lee de un archivo de texto jerárquico ``clave = valor``
con secciones como ``[model]`` cuyos nombres coinciden exactamente con los
campos de las dataclasses. Las claves ausentes toman los valores por defecto.
"""

import hashlib
import os
import types
import typing
from dataclasses import dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, ClassVar

from marco_oculomotor.errors import ConfigError


class Backbone(str, Enum):
    """Tipo de bloque secuencial del codificador."""
    RNN = "RNN"
    GRU = "GRU"
    LSTM = "LSTM"
    TRANSFORMER = "TRANSFORMER"


class EvalMode(str, Enum):
    """Modo del protocolo de predicción de estímulo."""
    SUPERVISED = "supervised"
    METRIC = "metric"


def _check_range(name: str, bounds: tuple[float, float]) -> None:
    """Valida que un rango esté bien ordenado."""
    if len(bounds) != 2 or bounds[0] > bounds[1]:
        raise ConfigError(f"Rango inválido en {name}: {bounds}")


@dataclass
class ModelConfig:
    """Configuración de arquitectura del codificador y decodificadores."""
    backbone: Backbone = Backbone.GRU
    n_layers: int = 2
    hidden: int = 128
    use_conv: bool = True
    conv_kernel: int = 7
    conv_channels: int = 30
    pool: int = 2
    learned_pool: bool = True
    cl_hidden: int = 128
    n_heads: int = 4
    ff_dim: int = 400

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Valida la configuración del modelo."""
        for name in ("n_layers", "hidden", "conv_kernel", "conv_channels",
                     "pool", "cl_hidden", "n_heads", "ff_dim"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"model.{name} debe ser positivo")
        if self.conv_kernel % 2 == 0:
            raise ConfigError("model.conv_kernel debe ser impar")
        if self.use_conv and self.conv_channels < 2:
            raise ConfigError("model.conv_channels debe ser al menos 2")
        if self.backbone is Backbone.TRANSFORMER and self.hidden % self.n_heads:
            raise ConfigError("model.hidden debe ser divisible por model.n_heads")

    @property
    def embedding_dim(self) -> int:
        """Dimensión del embedding producido por el codificador."""
        factor = 2 if self.backbone is Backbone.LSTM else 1
        return factor * self.n_layers * self.hidden


@dataclass
class PretrainConfig:
    """Configuración del pre-entrenamiento con cuatro tareas."""
    TASKS: ClassVar[tuple[str, ...]] = ("rc", "pc", "fi", "cl")

    epochs: int = 500
    lr: float = 0.001
    lr_halving_every: int = 100
    grad_clip: float = 0.5
    batch: int = 64
    w_rc: float = 1.0
    w_pc: float = 1.0
    w_fi: float = 1.0
    w_cl: float = 1.0
    input_len_s: tuple[float, float] = (5.0, 10.0)
    pc_horizon_ms: float = 500.0
    cl_frac: tuple[float, float] = (0.2, 0.4)
    train_frac: float = 0.8
    seed: int = 0
    vt_degps: float = 100.0
    min_fix_ms: float = 200.0
    augment: bool = False
    optimizer: str = "sgd"
    exclude_sources: tuple[str, ...] = ()
    eval_every: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Valida la configuración de pre-entrenamiento."""
        for name in ("epochs", "lr_halving_every", "batch", "eval_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"pretrain.{name} debe ser positivo")
        for name in ("lr", "grad_clip", "pc_horizon_ms", "vt_degps", "min_fix_ms"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"pretrain.{name} debe ser positivo")
        for task in self.TASKS:
            if getattr(self, f"w_{task}") < 0:
                raise ConfigError(f"pretrain.w_{task} no puede ser negativo")
        _check_range("pretrain.input_len_s", self.input_len_s)
        _check_range("pretrain.cl_frac", self.cl_frac)
        if self.input_len_s[0] <= 0:
            raise ConfigError("pretrain.input_len_s debe ser positivo")
        if not (0 < self.cl_frac[0] and self.cl_frac[1] < 1):
            raise ConfigError("pretrain.cl_frac debe estar en (0, 1)")
        if not 0 < self.train_frac < 1:
            raise ConfigError("pretrain.train_frac debe estar en (0, 1)")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("pretrain.optimizer debe ser 'sgd' o 'adam'")

    def weight(self, task: str) -> float:
        """Peso de una tarea en la pérdida combinada."""
        return float(getattr(self, f"w_{task}"))

    @property
    def active_tasks(self) -> tuple[str, ...]:
        """Tareas con peso distinto de cero."""
        return tuple(t for t in self.TASKS if self.weight(t) > 0)


@dataclass
class AugmentConfig:
    """Rangos de los aumentos aleatorios aplicados a los scanpaths."""
    offset_range_deg: tuple[float, float] = (0.0, 0.0)
    scale_range: tuple[float, float] = (1.0, 1.0)
    rotation_range_rad: tuple[float, float] = (0.0, 0.0)
    shear_range: tuple[float, float] = (0.0, 0.0)
    point_noise_sd_deg: float = 0.0
    point_noise_prob: float = 0.0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Valida rangos y probabilidades."""
        for name in ("offset_range_deg", "scale_range",
                     "rotation_range_rad", "shear_range"):
            _check_range(f"augment.{name}", getattr(self, name))
        if self.scale_range[0] <= 0:
            raise ConfigError("augment.scale_range debe ser positivo")
        if self.point_noise_sd_deg < 0:
            raise ConfigError("augment.point_noise_sd_deg no puede ser negativo")
        if not 0.0 <= self.point_noise_prob <= 1.0:
            raise ConfigError("augment.point_noise_prob debe estar en [0, 1]")

    @property
    def is_identity(self) -> bool:
        """Indica si la configuración no altera los datos."""
        return (
            self.offset_range_deg == (0.0, 0.0)
            and self.scale_range == (1.0, 1.0)
            and self.rotation_range_rad == (0.0, 0.0)
            and self.shear_range == (0.0, 0.0)
            and (self.point_noise_sd_deg == 0.0 or self.point_noise_prob == 0.0)
        )


@dataclass
class SynthConfig:
    """Configuración del generador de corpus sintético."""
    n_participants: int = 10
    n_stimuli: int = 10
    scanpaths_per_pair: int = 1
    n_sources: int = 1
    duration_s: tuple[float, float] = (8.0, 12.0)
    fixation_ms: tuple[float, float] = (250.0, 600.0)
    saccade_ms: tuple[float, float] = (16.0, 34.0)
    amplitude_deg: tuple[float, float] = (5.0, 25.0)
    jitter_sd_deg: float = 0.05
    n_clusters: int = 5
    participant_offset_sd_deg: float = 0.5
    jitter_scale_range: tuple[float, float] = (0.5, 1.5)
    dwell_bias_range: tuple[float, float] = (0.8, 1.2)
    clinical_fraction: float = 0.0
    clinical_dwell_factor: float = 1.6
    clinical_jitter_factor: float = 2.0
    width_px: int = 1920
    height_px: int = 1080
    width_mm: float = 531.0
    height_mm: float = 299.0
    viewing_distance_mm: float = 650.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Valida la configuración del generador."""
        for name in ("n_participants", "n_stimuli", "scanpaths_per_pair",
                     "n_sources", "n_clusters", "width_px", "height_px"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"synth.{name} debe ser positivo")
        for name in ("width_mm", "height_mm", "viewing_distance_mm",
                     "clinical_dwell_factor", "clinical_jitter_factor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"synth.{name} debe ser positivo")
        for name in ("duration_s", "fixation_ms", "saccade_ms", "amplitude_deg",
                     "jitter_scale_range", "dwell_bias_range"):
            bounds = getattr(self, name)
            _check_range(f"synth.{name}", bounds)
            if bounds[0] <= 0:
                raise ConfigError(f"synth.{name} debe ser positivo")
        if self.jitter_sd_deg < 0 or self.participant_offset_sd_deg < 0:
            raise ConfigError("synth: las desviaciones no pueden ser negativas")
        if not 0.0 <= self.clinical_fraction <= 1.0:
            raise ConfigError("synth.clinical_fraction debe estar en [0, 1]")
        if self.n_participants < self.n_sources:
            raise ConfigError("synth.n_participants debe cubrir todas las fuentes")


@dataclass
class EvalConfig:
    """Configuración de los protocolos de evaluación posteriores."""
    c_ways: int = 10
    k_shots: int = 1
    mode: EvalMode = EvalMode.SUPERVISED
    episodes: int = 500
    queries: int = 5
    meta_train_stimuli: int = 200
    proto_dim: int = 128
    proto_epochs: int = 100
    proto_iterations: int = 100
    proto_lr: float = 0.001
    mlp_epochs: int = 200
    mlp_lr: float = 0.001
    fine_tune: bool = False
    folds: int = 5
    inner_folds: int = 3
    lasso_cs: tuple[float, ...] = (0.01, 0.1, 1.0, 10.0, 100.0)
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Valida la configuración de evaluación."""
        for name in ("c_ways", "k_shots", "episodes", "queries",
                     "meta_train_stimuli", "proto_dim", "proto_epochs",
                     "proto_iterations", "mlp_epochs"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"eval.{name} debe ser positivo")
        if self.folds < 2 or self.inner_folds < 2:
            raise ConfigError("eval.folds y eval.inner_folds deben ser al menos 2")
        if not self.lasso_cs or any(c <= 0 for c in self.lasso_cs):
            raise ConfigError("eval.lasso_cs debe contener valores positivos")


@dataclass
class LoggingConfig:
    """Configuración de logging."""
    level: str = "INFO"
    log_file: str = ""
    max_file_size: int = 10 * 1024 * 1024  # 10MB
    backup_count: int = 5

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Valida el nivel de logging."""
        if self.level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ConfigError(f"logging.level desconocido: {self.level}")


@dataclass
class AppConfig:
    """Configuración principal de la aplicación."""
    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    SECTIONS: ClassVar[tuple[str, ...]] = (
        "model", "pretrain", "augment", "synth", "eval", "logging"
    )

    def validate(self) -> None:
        """Valida todas las secciones."""
        for name in self.SECTIONS:
            getattr(self, name).validate()


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _strip_quotes(raw: str) -> str:
    """Elimina comillas envolventes."""
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in ("'", '"'):
        return raw[1:-1]
    return raw


def _coerce_scalar(raw: str, target: Any, key: str) -> Any:
    """Convierte un texto al tipo escalar indicado."""
    text = _strip_quotes(raw.strip())
    try:
        if target is bool:
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if target is int:
            return int(text)
        if target is float:
            return float(text)
        if isinstance(target, type) and issubclass(target, Enum):
            for member in target:
                if text.lower() in (member.name.lower(), str(member.value).lower()):
                    return member
            raise ValueError(text)
        return text
    except ValueError as e:
        type_name = getattr(target, "__name__", str(target))
        raise ConfigError(
            f"Valor inválido para {key}: {raw!r} (se esperaba {type_name})"
        ) from e


def coerce_value(raw: str, annotation: Any, key: str) -> Any:
    """
    Convierte el texto de un valor al tipo anotado del campo.

    Args:
        raw: Texto del valor
        annotation: Tipo del campo de la dataclass
        key: Nombre completo de la clave (para los mensajes de error)

    Returns:
        Valor convertido
    """
    if typing.get_origin(annotation) is tuple:
        args = typing.get_args(annotation)
        text = _strip_quotes(raw.strip())
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce_scalar(p, args[0], key) for p in parts)
        if len(parts) != len(args):
            raise ConfigError(
                f"Valor inválido para {key}: se esperaban {len(args)} elementos"
            )
        return tuple(_coerce_scalar(p, a, key) for p, a in zip(parts, args, strict=True))
    if isinstance(annotation, types.UnionType):
        raise ConfigError(f"Tipo no soportado para {key}")
    return _coerce_scalar(raw, annotation, key)


def format_value(value: Any) -> str:
    """Representa un valor de configuración como texto."""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    return str(value)


def _section_fields(section: Any) -> dict[str, Any]:
    """Tipos de los campos de una sección."""
    hints = typing.get_type_hints(type(section))
    return {f.name: hints[f.name] for f in fields(section)}


class ConfigManager:
    """Gestor de configuración basado en un archivo de texto ``clave = valor``."""

    def __init__(self, path: str | None = None):
        """
        Inicializa el gestor de configuración.

        Args:
            path: Ruta al archivo de configuración. Si es None, usa los valores
                por defecto.
        """
        self.path = path
        self._config: AppConfig | None = None
        self._load_config()

    def _load_config(self) -> None:
        """Carga la configuración desde disco o crea la de por defecto."""
        if self.path is None:
            self._config = AppConfig()
            return
        try:
            text = Path(self.path).read_text(encoding="utf-8")
        except OSError as e:
            raise ConfigError(f"No se puede leer la configuración {self.path}: {e}") from e
        self._config = self.parse_text(text)

    @staticmethod
    def parse_text(text: str) -> AppConfig:
        """
        Parsea el texto de un archivo de configuración.

        Args:
            text: Contenido del archivo

        Returns:
            Configuración resultante, validada
        """
        config = AppConfig()
        owners: dict[str, list[str]] = {}
        for name in AppConfig.SECTIONS:
            for key in _section_fields(getattr(config, name)):
                owners.setdefault(key, []).append(name)

        section: str | None = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if stripped.startswith("[") and stripped.endswith("]"):
                section = stripped[1:-1].strip()
                if section not in AppConfig.SECTIONS:
                    raise ConfigError(f"Sección desconocida en línea {lineno}: [{section}]")
                continue
            if "=" not in stripped:
                raise ConfigError(f"Línea {lineno} sin '=': {line.strip()}")
            key, raw = (s.strip() for s in stripped.split("=", 1))

            if "." in key:
                target_section, name = key.split(".", 1)
            elif section is not None:
                target_section, name = section, key
            else:
                candidates = owners.get(key, [])
                if len(candidates) != 1:
                    detail = "ambigua" if candidates else "desconocida"
                    raise ConfigError(f"Clave {detail} en línea {lineno}: {key}")
                target_section, name = candidates[0], key

            if target_section not in AppConfig.SECTIONS:
                raise ConfigError(f"Configuración inválida: {key}")
            target = getattr(config, target_section)
            types_by_name = _section_fields(target)
            if name not in types_by_name:
                raise ConfigError(f"Configuración inválida: {target_section}.{name}")
            value = coerce_value(raw, types_by_name[name], f"{target_section}.{name}")
            # Asignar sin validar hasta el final
            object.__setattr__(target, name, value)

        config.validate()
        return config

    @staticmethod
    def to_text(config: AppConfig) -> str:
        """Serializa la configuración al formato ``clave = valor``."""
        lines: list[str] = []
        for name in AppConfig.SECTIONS:
            section = getattr(config, name)
            lines.append(f"[{name}]")
            for f in fields(section):
                lines.append(f"{f.name} = {format_value(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path: str | None = None) -> None:
        """Guarda la configuración actual en disco."""
        target = path or self.path
        if target is None or self._config is None:
            return
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        tmp = f"{target}.tmp"
        Path(tmp).write_text(self.to_text(self._config), encoding="utf-8")
        os.replace(tmp, target)

    @property
    def config(self) -> AppConfig:
        """Obtiene la configuración actual."""
        if self._config is None:
            self._load_config()
        assert self._config is not None
        return self._config

    def update(self, **kwargs: Any) -> None:
        """
        Actualiza la configuración con nuevos valores.

        Los valores pueden ser anidados usando notación de punto, por ejemplo:
        update(**{"model.backbone": "LSTM", "pretrain.epochs": 2})
        """
        config = self.config
        for key, value in kwargs.items():
            parts = key.split(".")
            if len(parts) != 2 or parts[0] not in AppConfig.SECTIONS:
                raise ConfigError(f"Configuración inválida: {key}")
            target = getattr(config, parts[0])
            types_by_name = _section_fields(target)
            if parts[1] not in types_by_name:
                raise ConfigError(f"Configuración inválida: {key}")
            if isinstance(value, str) and types_by_name[parts[1]] is not str:
                value = coerce_value(value, types_by_name[parts[1]], key)
            setattr(target, parts[1], value)
        config.validate()


def parse_config(path: str | Path) -> AppConfig:
    """
    Lee y valida un archivo de configuración.

    Args:
        path: Ruta al archivo

    Returns:
        Configuración completa; las claves ausentes toman valores por defecto
    """
    return ConfigManager(str(path)).config


def config_to_text(config: AppConfig) -> str:
    """Serializa una configuración completa."""
    return ConfigManager.to_text(config)


def config_hash(config: AppConfig) -> str:
    """Huella corta SHA-256 de la configuración."""
    digest = hashlib.sha256(config_to_text(config).encode("utf-8")).hexdigest()
    return digest[:16]


# Instancia global
_config_manager: ConfigManager | None = None


def get_config() -> AppConfig:
    """Obtiene la configuración global de la aplicación."""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager()
    return _config_manager.config


def load_config(path: str | None) -> AppConfig:
    """Reemplaza la configuración global por la leída de ``path``."""
    global _config_manager
    _config_manager = ConfigManager(path)
    return _config_manager.config


def update_config(**kwargs: Any) -> None:
    """Actualiza la configuración global con claves ``sección.campo``."""
    global _config_manager
    if _config_manager is None:
        _config_manager = ConfigManager()
    _config_manager.update(**kwargs)
