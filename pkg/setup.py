#!/usr/bin/env python3
"""
Script de configuración para Marco Oculomotor.
"""

import re
from pathlib import Path

from setuptools import find_packages, setup

SECTIONS = {
    "Dependencias principales": "install",
    "Desarrollo y testing": "dev",
    "Documentación": "docs",
}


def read(fname: str) -> str:
    """Lee un archivo y retorna su contenido."""
    return Path(fname).read_text("utf-8")


def get_version() -> str:
    """Obtiene la versión desde el archivo __init__.py."""
    init = Path("src/marco_oculomotor/__init__.py").read_text()
    version_match = re.search(r"^__version__ = ['\"]([^'\"]*)['\"]", init, re.M)
    if version_match:
        return version_match.group(1)
    raise RuntimeError("Versión no encontrada")


def parse_requirements(filename: str) -> dict[str, list[str]]:
    """
    Parsea un archivo de requerimientos agrupado por secciones.

    Cada sección empieza con un comentario ``# Título``; las líneas de
    paquete pueden llevar un comentario al final.

    Args:
        filename: Nombre del archivo

    Returns:
        Diccionario sección -> lista de requerimientos
    """
    groups: dict[str, list[str]] = {name: [] for name in SECTIONS.values()}
    current = "install"
    for line in read(filename).splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            current = SECTIONS.get(line.lstrip("# ").strip(), current)
            continue
        groups[current].append(line.split("#", 1)[0].strip())
    return groups


requirements = parse_requirements("requirements.txt")

setup(
    name="marco-oculomotor",
    version=get_version(),
    description="Aprendizaje auto-supervisado de representaciones de scanpaths oculares",
    long_description=read("README.md"),
    long_description_content_type="text/markdown",
    author="FmBlueSystem",
    author_email="info@fmbluesystem.com",
    license="MIT",

    # Paquetes
    package_dir={"": "src"},
    packages=find_packages(where="src"),

    # Entrypoints
    entry_points={
        "console_scripts": [
            "marco-oculomotor=marco_oculomotor.main:main",
        ],
    },

    # Requerimientos
    python_requires=">=3.10",
    install_requires=requirements["install"],
    extras_require={
        "dev": requirements["dev"],
        "docs": requirements["docs"],
        "full": requirements["dev"] + requirements["docs"],
    },

    # Metadatos
    keywords=[
        "eye-tracking",
        "scanpath",
        "self-supervised",
        "representation-learning",
        "fixation",
    ],
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Environment :: Console",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Natural Language :: Spanish",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
    ],

    zip_safe=False,
    platforms=["any"],
)
