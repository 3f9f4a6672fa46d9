"""Generalized digital twin networks: twin graphs, stochastic DAG evaluation,
mixture-based workload replicas and TSN failover simulation."""

from __future__ import annotations

__version__ = "0.1.0"
