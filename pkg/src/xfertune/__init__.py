"""Throughput optimization for bulk data transfers.

Offline: mine transfer logs into per-cluster throughput surfaces.
Online: adaptive sampling over those surfaces to pick (cc, p, pp).
"""

__version__ = "0.1.0"
