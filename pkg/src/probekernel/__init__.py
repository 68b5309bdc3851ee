"""probekernel: an agent-first data engine.

Serves batched speculative probes from machine agents: satisficing
semantics, cross-probe work sharing, agentic memory, steering feedback,
and branched what-if updates with fast rollback.
"""

__version__ = "0.1.0"

from .branching import BranchManager
from .engine import ProbeEngine
from .relational.database import MAIN_BRANCH, BranchCatalog, Database

__all__ = [
    "BranchCatalog",
    "BranchManager",
    "Database",
    "MAIN_BRANCH",
    "ProbeEngine",
    "__version__",
]
