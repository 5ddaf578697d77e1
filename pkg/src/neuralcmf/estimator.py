"""Scikit-learn style estimator facade over the training pipeline.

The estimator stores constructor parameters verbatim (sklearn convention) and
validates them in fit, so get_params/set_params and clone work as usual.
Fitting is self-supervised; y is accepted and ignored.
"""

from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .errors import DataError
from .tracking import predict_motion, track_points, warp_mask, warp_volume
from .trainer import TrainConfig, train
from .volume_io import MultiViewSequence, VolumeSequence, load_manifest


class NeuralCMF(BaseEstimator):
    """Self-supervised neural motion field over a cardiac cycle.

    fit() trains the implicit field on a volume or multi-view sequence;
    afterwards the estimator predicts dense motion, tracks points through
    the cycle, and warps volumes or masks between frames.

    Examples:
        >>> model = NeuralCMF(iterations=2000, batch_points=2048, seed=0)
        >>> model.fit(sequence)                    # doctest: +SKIP
        >>> motion = model.predict(points, t=0)    # doctest: +SKIP
    """

    def __init__(self, iterations=10000, batch_points=8192, lr0=1e-4,
                 alpha1=1.0, alpha2=0.1, alpha3=0.01, seed=0, precision="f32",
                 cycle_fraction=0.125, use_motion_loss=True,
                 use_cycle_loss=True, use_reg_loss=True, frame_stride=1,
                 grad_clip=0.0, threads=1, pose_rotation_trainable=True,
                 pose_translation_trainable=True, pose_freeze_first=True,
                 out_dir=None):
        self.iterations = iterations
        self.batch_points = batch_points
        self.lr0 = lr0
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.alpha3 = alpha3
        self.seed = seed
        self.precision = precision
        self.cycle_fraction = cycle_fraction
        self.use_motion_loss = use_motion_loss
        self.use_cycle_loss = use_cycle_loss
        self.use_reg_loss = use_reg_loss
        self.frame_stride = frame_stride
        self.grad_clip = grad_clip
        self.threads = threads
        self.pose_rotation_trainable = pose_rotation_trainable
        self.pose_translation_trainable = pose_translation_trainable
        self.pose_freeze_first = pose_freeze_first
        self.out_dir = out_dir

    def _build_config(self):
        return TrainConfig(
            iterations=self.iterations, batch_points=self.batch_points,
            lr0=self.lr0, alpha1=self.alpha1, alpha2=self.alpha2,
            alpha3=self.alpha3, seed=self.seed, precision=self.precision,
            cycle_fraction=self.cycle_fraction,
            use_motion_loss=self.use_motion_loss,
            use_cycle_loss=self.use_cycle_loss,
            use_reg_loss=self.use_reg_loss, frame_stride=self.frame_stride,
            grad_clip=self.grad_clip, threads=self.threads,
            pose_rotation_trainable=self.pose_rotation_trainable,
            pose_translation_trainable=self.pose_translation_trainable,
            pose_freeze_first=self.pose_freeze_first)

    @staticmethod
    def _as_dataset(X):
        if isinstance(X, (VolumeSequence, MultiViewSequence)):
            return X
        if isinstance(X, (str, Path)):
            return load_manifest(X)
        raise DataError(f"X must be a sequence object or a manifest path, got {type(X)!r}")

    def fit(self, X, y=None):
        """Train the field on a sequence (object or manifest path).

        Returns:
            self, with checkpoint_, network_, view_poses_, config_,
            period_T_ and final_losses_ set.
        """
        dataset = self._as_dataset(X)
        config = self._build_config()
        out_dir = None if self.out_dir is None else Path(self.out_dir)
        ckpt = train(config, dataset, out_dir=out_dir)
        self.checkpoint_ = ckpt
        self.network_ = ckpt.network
        self.view_poses_ = ckpt.view_poses
        self.config_ = config
        self.period_T_ = dataset.period_T
        self.final_losses_ = [float(row[-1]) for row in ckpt.loss_tail]
        return self

    def _check_fitted(self):
        if not hasattr(self, "network_"):
            raise NotFittedError("this NeuralCMF instance is not fitted yet; call fit first")

    def predict(self, X, t, direction="fwd"):
        """Motion vectors at normalized points X for the step out of frame t."""
        self._check_fitted()
        return predict_motion(self.network_, X, t, self.period_T_, direction)

    def track(self, seeds, t0=0, n_frames=None, direction="fwd"):
        """Trajectories of seed points through the cycle (one full cycle by
        default)."""
        self._check_fitted()
        if n_frames is None:
            n_frames = self.period_T_
        return track_points(self.network_, seeds, t0, n_frames, self.period_T_, direction)

    def warp(self, source_grid, t_src, t_dst):
        """Warp a source-frame intensity grid from t_src onto t_dst."""
        self._check_fitted()
        return warp_volume(self.network_, source_grid, t_src, t_dst, self.period_T_)

    def warp_mask(self, mask, t_src, t_dst, region_tag=""):
        """Carry a binary mask from t_src to t_dst along the motion field."""
        self._check_fitted()
        return warp_mask(self.network_, mask, t_src, t_dst, self.period_T_, region_tag)

    def score(self, X=None, y=None):
        """Higher-is-better fit quality: negative mean of the last logged
        total losses. X and y are accepted for API compatibility."""
        self._check_fitted()
        losses = self.final_losses_
        if not losses:
            return 0.0
        return -float(sum(losses) / len(losses))
