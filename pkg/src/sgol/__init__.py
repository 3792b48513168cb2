"""Sketch-guided object localization: a numpy DETR conditioned on a query sketch.

Modules: ``tensor`` (autodiff), ``nn`` (layers, AdamW, checkpoints),
``geometry``, ``matching``, ``losses``, ``model``, ``evaluation``, ``data``,
``training``, ``runs``/``cli`` (commands) and ``verify`` (oracle suites).
"""

__version__ = "0.1.0"
