"""Event-camera visual place recognition with a stateless spiking network.

Subpackages are plain modules: ``events`` (streams, histograms, poses),
``augment``, ``nn`` (autodiff layers and the threshold neuron), ``arch``
(SEW encoder and spiking MixVPR head), ``contrastive``, ``train``,
``retrieval``, ``energy``, ``synth``, ``config``, ``pipeline`` and ``cli``.
"""

from .arch import DESK_SMALL, PAPER_SCALE, ModelConfig, SpikeVPR, param_count
from .events import EventHistogram, EventStream, PlaceSample, PoseTrack, build_histogram

__all__ = [
    "DESK_SMALL",
    "EventHistogram",
    "EventStream",
    "ModelConfig",
    "PAPER_SCALE",
    "PlaceSample",
    "PoseTrack",
    "SpikeVPR",
    "build_histogram",
    "param_count",
]

__version__ = "0.1.0"
