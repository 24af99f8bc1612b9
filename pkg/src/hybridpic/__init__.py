"""Hybrid particle/grid fluid solver with PIC, APIC and PolyPIC transfers on a MAC grid,
plus mixture transfers that let fluid soak into spring-mass fabric."""

from .kernels import ModeBasis
from .scene import dump_scene, load_scene, parse_scene
from .simloop import NumericalAbort, RunResult, Simulation, run
from .state import ConfigError, MacGrid, Particles, SceneConfig, TransferScheme, seed_particles

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "MacGrid", "ModeBasis", "NumericalAbort", "Particles", "RunResult", "SceneConfig",
    "Simulation", "TransferScheme", "dump_scene", "load_scene", "parse_scene", "run", "seed_particles",
]
