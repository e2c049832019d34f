#!/usr/bin/env python3
"""
Script de linting para Marco Oculomotor.

Este script ejecuta ruff y mypy para verificar el estilo
y tipos del código.
"""

import subprocess
import sys
from pathlib import Path

EXCLUDE = {"/.venv/", "/.git/", "/__pycache__/", "/build/", "/dist/", "/examples/"}


def run_command(command: list[str]) -> tuple[int, str, str]:
    """
    Ejecuta un comando del sistema.

    Returns:
        Tupla con (código de salida, stdout, stderr)
    """
    try:
        result = subprocess.run(command, capture_output=True, text=True, check=False)
        return result.returncode, result.stdout, result.stderr
    except OSError as e:
        return 1, "", str(e)


def find_python_files(directory: Path, exclude: set[str]) -> list[Path]:
    """Archivos Python de un directorio, sin los patrones excluidos."""
    return sorted(p for p in directory.rglob("*.py") if not any(e in str(p) for e in exclude))


def run_ruff(files: list[Path]) -> bool:
    """
    Ejecuta Ruff para linting.

    Args:
        files: Lista de archivos a verificar

    Returns:
        True si no hubo errores
    """
    print("\n=== Ejecutando Ruff ===")
    code, out, err = run_command(["ruff", "check", *map(str, files)])
    if code != 0:
        print("⚠ Problemas de estilo encontrados:")
        print(out or err)
        return False
    print("✓ Verificación de estilo exitosa")
    return True


def run_mypy(src_dir: Path) -> bool:
    """Ejecuta MyPy sobre el paquete."""
    print("\n=== Ejecutando MyPy ===")
    code, out, err = run_command(["mypy", str(src_dir / "marco_oculomotor")])
    if code != 0:
        print("⚠ Problemas de tipos encontrados:")
        print(out or err)
        return False
    print("✓ Verificación de tipos exitosa")
    return True


def main() -> int:
    """
    Función principal.

    Returns:
        0 si todo fue exitoso, otro valor en caso de error
    """
    project_dir = Path(__file__).parent.parent
    src_dir = project_dir / "src"
    python_files = (
        find_python_files(src_dir, EXCLUDE)
        + find_python_files(project_dir / "tests", EXCLUDE)
        + find_python_files(project_dir / "scripts", EXCLUDE)
    )
    if not python_files:
        print("No se encontraron archivos Python para verificar")
        return 1

    print(f"Verificando {len(python_files)} archivos...")
    ok = run_ruff(python_files)
    ok = run_mypy(src_dir) and ok
    if ok:
        print("\n✨ Todas las verificaciones pasaron exitosamente")
        return 0
    print("\n⚠ Se encontraron problemas que necesitan corrección")
    return 1


if __name__ == "__main__":
    sys.exit(main())
