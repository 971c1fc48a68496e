"""Desk-scale chest X-ray triage: a numpy training stack, two small
convolutional networks with a validity gate, and an HTTP inference service."""

__version__ = "0.1.0"

from .models import (
    CLASSIFIER_CLASSES,
    FILTER_CLASSES,
    STAGE1_CLASSES,
    CovidNetConfig,
    FilterNetConfig,
    ModelGraph,
    build_covid_net,
    build_filter_net,
    build_model,
    compute_cam,
    load_model,
    raw_cam,
    save_model,
)

__all__ = [
    "CLASSIFIER_CLASSES",
    "FILTER_CLASSES",
    "STAGE1_CLASSES",
    "CovidNetConfig",
    "FilterNetConfig",
    "ModelGraph",
    "build_covid_net",
    "build_filter_net",
    "build_model",
    "compute_cam",
    "load_model",
    "raw_cam",
    "save_model",
    "__version__",
]
