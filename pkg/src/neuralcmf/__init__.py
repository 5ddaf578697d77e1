"""Self-supervised neural cardiac motion field.

A coordinate network jointly represents a time-varying intensity volume and
dense forward/backward motion over one cardiac cycle, trained directly from
3D volume sequences or multi-view 2D slice sequences. Submodules: volume_io
(datasets, phantom), field_network (the implicit field), geometry (time,
poses, advection), losses, trainer, tracking, strain, metrics, estimator
(sklearn-style facade), cli.
"""

__version__ = "0.1.0"

from .errors import DataError, NeuralCMFError, NumericalError, UsageError
from .estimator import NeuralCMF
from .field_network import FieldNetwork, coord_jacobian, eval_field, init_network
from .geometry import compose_cycle, normalize_time, slice_image
from .losses import LossWeights, total_loss
from .metrics import (MetricsReport, hausdorff, motion_cosine, mte,
                      overlap_metrics, pca_project)
from .strain import (aha_assign, deformation_gradient, directional_strain,
                     lagrangian_strain, local_directions, strain_curves)
from .tracking import predict_motion, track_points, warp_mask, warp_volume
from .trainer import TrainConfig, load_checkpoint, save_checkpoint, train
from .volume_io import (MultiViewSequence, PhantomSpec, VolumeSequence,
                        generate_phantom, load_manifest, phantom_true_motion,
                        sample_intensity, write_phantom_dataset)

__all__ = [
    "DataError", "NeuralCMFError", "NumericalError", "UsageError",
    "NeuralCMF",
    "FieldNetwork", "coord_jacobian", "eval_field", "init_network",
    "compose_cycle", "normalize_time", "slice_image",
    "LossWeights", "total_loss",
    "MetricsReport", "hausdorff", "motion_cosine", "mte",
    "overlap_metrics", "pca_project",
    "aha_assign", "deformation_gradient", "directional_strain",
    "lagrangian_strain", "local_directions", "strain_curves",
    "predict_motion", "track_points", "warp_mask", "warp_volume",
    "TrainConfig", "load_checkpoint", "save_checkpoint", "train",
    "MultiViewSequence", "PhantomSpec", "VolumeSequence",
    "generate_phantom", "load_manifest", "phantom_true_motion",
    "sample_intensity", "write_phantom_dataset",
    "__version__",
]
