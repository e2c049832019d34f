#!/usr/bin/env python3
"""
Procesador por Lotes - Marco Oculomotor
=======================================

Procesa colecciones de grabaciones o scanpaths por bloques usando un
pool de hilos. Los fallos de un elemento se registran en el progreso y
no detienen el resto del lote.
"""

from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone

UTC = timezone.utc
from typing import Generic, TypeVar

from .logger import get_logger

logger = get_logger(__name__)

T = TypeVar('T')
R = TypeVar('R')


@dataclass
class BatchProgress:
    """Representa el progreso del procesamiento por lotes."""
    total_items: int = 0
    processed_items: int = 0
    current_item: str | None = None
    errors: list[str] = field(default_factory=list)
    start_time: datetime = field(default_factory=lambda: datetime.now(tz=UTC))

    @property
    def completion_percentage(self) -> float:
        """Retorna el porcentaje de completitud."""
        if self.total_items == 0:
            return 0.0
        return (self.processed_items / self.total_items) * 100

    @property
    def elapsed_time(self) -> float:
        """Retorna el tiempo transcurrido en segundos."""
        return (datetime.now(tz=UTC) - self.start_time).total_seconds()


class BatchProcessor(Generic[T, R]):
    """
    Procesador genérico por lotes.

    TypeVars:
        T: Tipo de los items a procesar
        R: Tipo del resultado del procesamiento
    """

    def __init__(self, chunk_size: int = 32, max_workers: int = 1):
        """
        Inicializa el procesador por lotes.

        Args:
            chunk_size: Tamaño de cada lote
            max_workers: Máximo de hilos concurrentes
        """
        self.chunk_size = max(1, chunk_size)
        self.max_workers = max(1, max_workers)
        self._progress = BatchProgress()
        self._cancel_requested = False

    def process_items(
        self,
        items: list[T],
        process_func: Callable[[T], R],
        on_progress: Callable[[BatchProgress], None] | None = None,
        describe: Callable[[T], str] = str,
    ) -> list[R | None]:
        """
        Procesa una lista de items en chunks, conservando el orden.

        Args:
            items: Lista de items a procesar
            process_func: Función de procesamiento
            on_progress: Callback para reportar progreso
            describe: Función que describe un item en los mensajes de error

        Returns:
            Resultados alineados con ``items``; ``None`` donde el item falló
            o quedó sin procesar por una cancelación
        """
        self._progress = BatchProgress(total_items=len(items))
        self._cancel_requested = False
        results: list[R | None] = []

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            for i in range(0, len(items), self.chunk_size):
                if self._cancel_requested:
                    pending = len(items) - i
                    logger.warning(f"Procesamiento cancelado; {pending} elementos sin procesar")
                    self._progress.errors.append(f"cancelado: {pending} elementos sin procesar")
                    results.extend([None] * pending)
                    break
                chunk = items[i:i + self.chunk_size]
                futures = [executor.submit(process_func, item) for item in chunk]
                for item, future in zip(chunk, futures, strict=True):
                    self._progress.current_item = describe(item)
                    try:
                        results.append(future.result())
                    except Exception as e:
                        message = f"{describe(item)}: {e}"
                        logger.error(f"Error procesando {message}")
                        self._progress.errors.append(message)
                        results.append(None)
                self._progress.processed_items += len(chunk)
                if on_progress:
                    on_progress(self._progress)

        return results

    def cancel(self) -> None:
        """Cancela el procesamiento actual tras el chunk en curso."""
        self._cancel_requested = True

    @property
    def progress(self) -> BatchProgress:
        """Obtiene el progreso actual."""
        return self._progress
