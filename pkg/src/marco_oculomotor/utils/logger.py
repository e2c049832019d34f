#!/usr/bin/env python3
"""
Sistema de Logging - Marco Oculomotor
=====================================

Logging centralizado con niveles configurables, rotación de archivos y
formato con colores. Cada registro lleva el contexto de ejecución
(subcomando y semilla) para poder separar ejecuciones en un mismo archivo
de log. La consola va siempre a stderr.
"""

import logging
import logging.handlers
import os
import sys
from collections.abc import MutableMapping
from datetime import datetime, timezone

UTC = timezone.utc
from pathlib import Path
from threading import Lock
from typing import Any, ClassVar

from .config import AppConfig, get_config

_run_context = ""


class CustomFormatter(logging.Formatter):
    """Formateador con colores, hilo y contexto de ejecución."""

    COLORS: ClassVar[dict[str, str]] = {
        'DEBUG': '\033[0;36m',
        'INFO': '\033[0;32m',
        'WARNING': '\033[0;33m',
        'ERROR': '\033[0;31m',
        'CRITICAL': '\033[1;31m',
    }
    RESET = '\033[0m'

    def __init__(self, colored: bool = True):
        super().__init__()
        self.colored = colored and sys.stderr.isatty()

    def format(self, record: logging.LogRecord) -> str:
        stamp = datetime.fromtimestamp(record.created, tz=UTC).strftime('%Y-%m-%d %H:%M:%S.%f')[:-3]
        parts = [stamp]
        run = getattr(record, "run", "")
        if run:
            parts.append(f"[{run}]")
        if record.threadName != "MainThread":
            parts.append(f"[{record.threadName}]")
        parts.append(f"{record.levelname:>8} {record.name}: {record.getMessage()}")
        line = " ".join(parts)
        if record.exc_info:
            line += "\n" + self.formatException(record.exc_info)
        if self.colored and record.levelname in self.COLORS:
            line = f"{self.COLORS[record.levelname]}{line}{self.RESET}"
        return line


def _has_file_handler(base: logging.Logger, log_file: str) -> bool:
    target = os.path.abspath(log_file)
    return any(getattr(h, "baseFilename", None) == target for h in base.handlers)


def _file_handler(log_file: str, max_size: int, backup_count: int) -> logging.Handler:
    Path(log_file).parent.mkdir(parents=True, exist_ok=True)
    handler = logging.handlers.RotatingFileHandler(
        log_file, maxBytes=max_size, backupCount=backup_count, encoding='utf-8'
    )
    handler.setFormatter(CustomFormatter(colored=False))
    return handler


class Logger(logging.LoggerAdapter):  # type: ignore[type-arg]
    """
    Logger de módulo con handlers de consola y archivo.

    Añade a cada registro el contexto de ejecución activo (ver
    ``set_run_context``). El ``logging.Logger`` subyacente está en
    ``self.logger``.
    """

    def __init__(
        self,
        name: str,
        level: int = logging.INFO,
        log_file: str | None = None,
        max_size: int = 10 * 1024 * 1024,
        backup_count: int = 5,
    ):
        """
        Args:
            name: Nombre del logger
            level: Nivel de logging
            log_file: Archivo de log con rotación (opcional)
            max_size: Tamaño máximo del archivo en bytes
            backup_count: Número de backups a mantener
        """
        base = logging.getLogger(name)
        super().__init__(base, {})
        base.setLevel(level)
        base.propagate = False
        if base.handlers:
            return
        console = logging.StreamHandler(sys.stderr)
        console.setFormatter(CustomFormatter())
        base.addHandler(console)
        if log_file:
            base.addHandler(_file_handler(log_file, max_size, backup_count))

    def process(self, msg: Any, kwargs: MutableMapping[str, Any]) -> tuple[Any, MutableMapping[str, Any]]:
        kwargs["extra"] = {**kwargs.get("extra", {}), "run": _run_context}
        return msg, kwargs


class LoggerManager:
    """Gestor centralizado de loggers."""

    def __init__(self) -> None:
        self._loggers: dict[str, Logger] = {}
        self._lock = Lock()
        self.level = getattr(logging, self.config.logging.level.upper(), logging.INFO)

    @property
    def config(self) -> AppConfig:
        """Configuración global vigente (puede reemplazarse con ``load_config``)."""
        return get_config()

    def get_logger(self, name: str) -> Logger:
        """
        Obtiene o crea un logger.

        Args:
            name: Nombre del logger

        Returns:
            Logger configurado
        """
        with self._lock:
            if name not in self._loggers:
                cfg = self.config.logging
                self._loggers[name] = Logger(
                    name=name,
                    level=self.level,
                    log_file=cfg.log_file or None,
                    max_size=cfg.max_file_size,
                    backup_count=cfg.backup_count,
                )
            return self._loggers[name]

    def set_level(self, level: int) -> None:
        """Establece el nivel de todos los loggers, presentes y futuros."""
        with self._lock:
            self.level = level
            for logger in self._loggers.values():
                logger.logger.setLevel(level)

    def add_file(self, log_file: str) -> None:
        """Añade un archivo de log con rotación a los loggers que aún no lo tienen."""
        with self._lock:
            cfg = self.config.logging
            cfg.log_file = log_file
            for logger in self._loggers.values():
                if _has_file_handler(logger.logger, log_file):
                    continue
                logger.logger.addHandler(_file_handler(log_file, cfg.max_file_size, cfg.backup_count))


# Instancia global
_logger_manager: LoggerManager | None = None


def _manager() -> LoggerManager:
    global _logger_manager
    if _logger_manager is None:
        _logger_manager = LoggerManager()
    return _logger_manager


def get_logger(name: str) -> Logger:
    """
    Obtiene un logger configurado.

    Args:
        name: Nombre del logger

    Returns:
        Logger configurado
    """
    return _manager().get_logger(name)


def set_level(level: str) -> None:
    """Cambia el nivel global de logging (p. ej. desde ``--log-level``)."""
    _manager().set_level(getattr(logging, level.upper(), logging.INFO))


def add_log_file(log_file: str) -> None:
    """Activa un archivo de log para todos los loggers."""
    _manager().add_file(log_file)


def set_run_context(command: str | None = None, seed: int | None = None) -> str:
    """
    Fija el contexto que acompaña a los registros siguientes, p. ej.
    ``pretrain seed=5``. Sin argumentos lo borra.

    Returns:
        El contexto activo
    """
    global _run_context
    parts = [command] if command else []
    if seed is not None:
        parts.append(f"seed={seed}")
    _run_context = " ".join(parts)
    return _run_context
