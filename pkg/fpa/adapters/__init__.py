"""
Adapter Layer - File Format Components

This package contains adapters between in-memory records and the files the
pipeline reads and writes (IDX datasets, checkpoints, saliency archives, curves).
"""

from .artifact_adapter import ArtifactAdapter
from .idx_adapter import IdxAdapter

__all__ = [
    "ArtifactAdapter",
    "IdxAdapter",
]
