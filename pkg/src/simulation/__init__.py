"""
Synthetic phantoms and a simulated crowd.
"""

from .phantom import Phantom, PhantomConfig, generate_phantom
from .protocol import (
    ProtocolConfig,
    Tile,
    WorkerPoolConfig,
    WorkerProfile,
    make_tiles,
    make_worker_pool,
    run_protocol,
    simulate_worker,
)

__all__ = [
    "Phantom",
    "PhantomConfig",
    "generate_phantom",
    "ProtocolConfig",
    "Tile",
    "WorkerPoolConfig",
    "WorkerProfile",
    "make_tiles",
    "make_worker_pool",
    "run_protocol",
    "simulate_worker",
]
