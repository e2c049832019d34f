#!/usr/bin/env python3
"""
Configuración de Sphinx para la documentación de Marco Oculomotor.
"""

import os
import sys

# Agregar el código fuente al path
sys.path.insert(0, os.path.abspath("../src"))

# Información del proyecto
project = "Marco Oculomotor"
copyright = "2026, FmBlueSystem"
author = "FmBlueSystem"
version = "0.1"
release = "0.1.0"

# Extensiones de Sphinx
extensions = [
    "sphinx.ext.autodoc",      # Documentación automática de código
    "sphinx.ext.napoleon",     # Soporte para docstrings Google
    "sphinx.ext.viewcode",     # Enlaces al código fuente
    "sphinx.ext.intersphinx",  # Enlaces a otra documentación
    "sphinx_autodoc_typehints",
    "sphinx_rtd_theme",
]

autodoc_default_options = {
    "members": True,
    "undoc-members": True,
    "show-inheritance": True,
    "member-order": "bysource",
}
autodoc_mock_imports = ["torch"]

napoleon_google_docstring = True
napoleon_numpy_docstring = False
napoleon_include_init_with_doc = True

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "torch": ("https://pytorch.org/docs/stable/", None),
    "sklearn": ("https://scikit-learn.org/stable/", None),
}

templates_path = ["_templates"]
exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]

# Opciones HTML
html_theme = "sphinx_rtd_theme"
html_title = "Marco Oculomotor"

language = "es"
master_doc = "index"
source_suffix = ".rst"

add_module_names = False
autodoc_typehints = "description"
autodoc_typehints_format = "short"
