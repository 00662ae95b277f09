"""Virtual-time model of multi-link host/accelerator IO and the operators built on it."""

from .exchange import RefGroup, exchange, naive_exchange
from .executor import ChunkMap, CostModel, ExecReport, ExKernelSpec, chain, run_exkernel
from .fabric import Engine, MemRef, Topology, build_topology, load_topology
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "ChunkMap", "CostModel", "Engine", "ExKernelSpec", "ExecReport", "KERNEL_BACKEND", "MemRef", "RefGroup",
    "Topology", "build_topology", "chain", "exchange", "load_topology", "naive_exchange", "run_exkernel",
]
