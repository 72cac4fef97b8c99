"""beamkd: sub-6 GHz to mmWave beam prediction with knowledge-distilled MLPs."""

from . import beams, dataset, distill, fileio, metrics, neuralnet, scenario

__version__ = "0.1.0"

__all__ = [
    "beams",
    "dataset",
    "distill",
    "fileio",
    "metrics",
    "neuralnet",
    "scenario",
    "__version__",
]
