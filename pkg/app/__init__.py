"""
cmoe-lab - a numerical laboratory for Connector-MoE routing, LoRA-MoE and
multi-task gradient interference diagnostics on synthetic multi-task suites.
"""

from .config import config

# Version info
__version__ = "1.0.0"

# Public API
__all__ = ["config", "__version__"]
