#!/usr/bin/env python3
"""
Errores - Marco Oculomotor
==========================

Jerarquía de excepciones del proyecto. Cada familia se corresponde con un
código de salida de la línea de comandos.
"""


class MarcoError(Exception):
    """Error base del proyecto."""

    exit_code: int = 1


class GazeDataError(MarcoError, ValueError):
    """Datos de mirada corruptos, insuficientes o ilegibles."""

    exit_code = 2


class SegmentTooShortError(GazeDataError):
    """El scanpath no alcanza la longitud mínima para la operación."""


class ConfigError(MarcoError, ValueError):
    """Configuración inválida; el mensaje nombra la clave culpable."""

    exit_code = 1


class UsageError(MarcoError, ValueError):
    """Uso incorrecto o protocolo imposible con los datos disponibles."""

    exit_code = 1


class NumericalError(MarcoError, ArithmeticError):
    """Pérdida o gradiente no finito durante el entrenamiento."""

    exit_code = 3
