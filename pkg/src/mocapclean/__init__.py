"""mocapclean: adaptive per-joint filter denoising and gap filling for mocap data.

The package is organized around a small number of building blocks:

- :mod:`mocapclean.bvh` — BVH parsing/writing and the core motion containers.
- :mod:`mocapclean.kinematics` — forward kinematics over the joint hierarchy.
- :mod:`mocapclean.features` — the 129-wide network input representation.
- :mod:`mocapclean.corruption` — synthetic noise and gap generators.
- :mod:`mocapclean.autodiff` — the reverse-mode tape used to train the networks.
- :mod:`mocapclean.ebf` — the filter-predicting denoiser network.
- :mod:`mocapclean.ebd` — the gap-filling network.
- :mod:`mocapclean.bench` — baselines, metrics and the benchmark harness.
- :mod:`mocapclean.cli` — the command-line pipeline.
"""

from mocapclean.bvh import BvhError, MotionClip, Skeleton, parse_bvh, write_bvh
from mocapclean.features import ChannelLayout, channel_stats, compute_input_features

__version__ = "0.1.0"

__all__ = [
    "BvhError",
    "ChannelLayout",
    "MotionClip",
    "Skeleton",
    "channel_stats",
    "compute_input_features",
    "parse_bvh",
    "write_bvh",
    "__version__",
]
