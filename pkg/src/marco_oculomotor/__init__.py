"""
Marco Oculomotor
================

Herramientas para aprender representaciones de scanpaths oculares:
preprocesamiento canónico de mirada, identificación de fijaciones I-VT,
pre-entrenamiento auto-supervisado de un codificador secuencial con cuatro
tareas, extracción de embeddings y protocolos de evaluación posteriores.
"""

__version__ = "0.1.0"
