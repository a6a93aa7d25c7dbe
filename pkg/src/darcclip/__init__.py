"""Adaptive multimodal refinement stack over precomputed image/text embeddings.

The public surface:

- :class:`darcclip.estimator.DarcClipClassifier` — scikit-learn estimator.
- :mod:`darcclip.model` — the refinement architecture and its config.
- :mod:`darcclip.autodiff` — the tensor/graph layer with gradient checking.
- :mod:`darcclip.data` / :mod:`darcclip.checkpoint` — bundle and checkpoint
  file formats.
- :mod:`darcclip.train`, :mod:`darcclip.metrics`, :mod:`darcclip.cli`.
"""

__version__ = "0.1.0"

from .autodiff import Graph, Tensor, grad_check
from .data import EmbeddingBundle, TaskSpec, read_bundle, synth_generate, write_bundle
from .estimator import DarcClipClassifier
from .metrics import EvalReport
from .model import DarcModel, ModelConfig
from .train import TrainConfig, TrainResult, train

__all__ = [
    "DarcClipClassifier",
    "DarcModel",
    "ModelConfig",
    "EmbeddingBundle",
    "TaskSpec",
    "EvalReport",
    "TrainConfig",
    "TrainResult",
    "Graph",
    "Tensor",
    "grad_check",
    "read_bundle",
    "write_bundle",
    "synth_generate",
    "train",
    "__version__",
]
