"""
Service Layer - Training, Saliency and Evaluation Components

This package contains the numerical services (model, data, augmentation,
saliency, perturbation, report) and the ExperimentService that chains them
into the CLI commands.
"""

from .experiment_service import ExperimentService

__all__ = [
    "ExperimentService",
]
