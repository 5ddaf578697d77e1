"""End-to-end optimization: point sampling, Adam with a cosine-annealed
learning rate, binary checkpoints with bit-exact resume, and sweeps.

Checkpoint byte layout (little endian throughout):

    bytes 0..3    magic b"NCMF"
    bytes 4..7    uint32 format version (currently 1)
    bytes 8..11   uint32 header length H
    bytes 12..    header JSON (UTF-8, sorted keys, compact separators)
    then          raw array section, in header-declared order:
                  flat network parameters, pose rotations, pose translations,
                  Adam first moments, Adam second moments (all in the
                  training dtype), then the sampler RNG state bytes.

The header carries no timestamps, so identically seeded single-threaded runs
produce byte-identical files.
"""

import dataclasses
import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from ._validation import require
from .errors import DataError, NumericalError
from .field_network import FieldNetwork, flatten_params, init_network, load_flat_params_
from .geometry import ViewPose, apply_poses
from .losses import LossWeights, PointBatch, total_loss
from .volume_io import MultiViewSequence, VolumeSequence

logger = logging.getLogger("neuralcmf.trainer")

CHECKPOINT_MAGIC = b"NCMF"
CHECKPOINT_VERSION = 1
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    iterations: int = 10000
    batch_points: int = 8192
    lr0: float = 1e-4
    alpha1: float = 1.0
    alpha2: float = 0.1
    alpha3: float = 0.01
    seed: int = 0
    precision: str = "f32"
    cycle_fraction: float = 0.125
    ckpt_every: int = 0
    use_motion_loss: bool = True
    use_cycle_loss: bool = True
    use_reg_loss: bool = True
    pose_rotation_trainable: bool = True
    pose_translation_trainable: bool = True
    pose_freeze_first: bool = True
    frame_stride: int = 1
    grad_clip: float = 0.0
    threads: int = 1

    def __post_init__(self):
        require(self.iterations >= 1, f"iterations must be >= 1, got {self.iterations}")
        require(self.batch_points >= 1, f"batch_points must be >= 1, got {self.batch_points}")
        require(self.lr0 > 0, f"lr0 must be > 0, got {self.lr0}")
        require(self.precision in ("f32", "f64"),
                f"precision must be 'f32' or 'f64', got {self.precision!r}")
        require(0.0 < self.cycle_fraction <= 1.0,
                f"cycle_fraction must lie in (0, 1], got {self.cycle_fraction}")
        require(self.frame_stride >= 1, f"frame_stride must be >= 1, got {self.frame_stride}")
        require(self.threads >= 1, f"threads must be >= 1, got {self.threads}")

    @property
    def weights(self):
        return LossWeights(self.alpha1, self.alpha2, self.alpha3)

    @property
    def torch_dtype(self):
        return torch.float64 if self.precision == "f64" else torch.float32

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, doc):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        require(not unknown, f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)


def config_hash(config):
    payload = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


# ---------------------------------------------------------------------------
# Schedule and optimizer
# ---------------------------------------------------------------------------

def _cos_pi(x):
    # cos(pi x), exact at half-integer x so schedule anchors hold exactly
    r = math.fmod(x, 2.0)
    if r < 0.0:
        r += 2.0
    if r == 0.0:
        return 1.0
    if r in (0.5, 1.5):
        return 0.0
    if r == 1.0:
        return -1.0
    return math.cos(math.pi * x)


def cosine_lr(iteration, config):
    """lr(i) = lr0 * (1 + cos(pi i / iterations)) / 2, annealed to a 0 floor."""
    require(0 <= iteration <= config.iterations,
            f"iteration {iteration} outside [0, {config.iterations}]")
    return config.lr0 * 0.5 * (1.0 + _cos_pi(iteration / config.iterations))


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict


def init_adam_state(params):
    return AdamState(step=0,
                     m={k: torch.zeros_like(p) for k, p in params.items()},
                     v={k: torch.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, state, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """One bias-corrected Adam update, applied in place.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2
    p <- p - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps)
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if not torch.isfinite(g).all():
                raise NumericalError(f"non-finite gradient for parameter '{name}'")
            m = state.m[name]
            v = state.v[name]
            m.mul_(beta1).add_(g, alpha=1.0 - beta1)
            v.mul_(beta2).addcmul_(g, g, value=1.0 - beta2)
            update = lr * (m / bc1) / ((v / bc2).sqrt() + eps)
            if not torch.isfinite(update).all():
                raise NumericalError(f"non-finite Adam update for parameter '{name}'")
            p.sub_(update)


# ---------------------------------------------------------------------------
# Batch sampling
# ---------------------------------------------------------------------------

@dataclass
class ViewPixelBatch:
    """2D-mode raw batch; world coordinates are produced through the poses."""

    plane: torch.Tensor    # (N, 3) centered plane coordinates
    view: torch.Tensor     # (N,) view indices
    t: torch.Tensor        # (N,) frame indices
    target: torch.Tensor   # (N,) observed pixel intensities


def sample_batch(generator, dataset, batch_points, dtype=torch.float32, frame_stride=1):
    """Draw a uniform batch of supervision samples.

    3D mode: uniform over voxel grid nodes x frames; node i of an axis of
    size N gets coordinate i / (N - 1). Returns a PointBatch.
    2D mode: uniform over views x pixels x frames. Returns a ViewPixelBatch
    whose world coordinates are still to be produced through the poses.
    """
    n = int(batch_points)
    if isinstance(dataset, VolumeSequence):
        frames_avail = np.arange(0, dataset.n_frames, frame_stride)
        t = frames_avail[torch.randint(len(frames_avail), (n,), generator=generator).numpy()]
        dims = dataset.dims
        idx = [torch.randint(d, (n,), generator=generator).numpy() for d in dims]
        coords = np.stack([idx[a] / (dims[a] - 1.0) for a in range(3)], axis=1)
        target = dataset.frames[t, idx[0], idx[1], idx[2]]
        return PointBatch(X=torch.as_tensor(coords, dtype=dtype),
                          t=torch.as_tensor(t),
                          target=torch.as_tensor(target, dtype=dtype),
                          period_T=dataset.period_T)
    if isinstance(dataset, MultiViewSequence):
        frames_avail = np.arange(0, dataset.n_frames, frame_stride)
        t = frames_avail[torch.randint(len(frames_avail), (n,), generator=generator).numpy()]
        k = torch.randint(dataset.n_views, (n,), generator=generator).numpy()
        h, w = dataset.image_hw
        row = torch.randint(h, (n,), generator=generator).numpy()
        col = torch.randint(w, (n,), generator=generator).numpy()
        plane = np.stack([col / (w - 1.0) - 0.5, row / (h - 1.0) - 0.5, np.zeros(n)], axis=1)
        target = dataset.views[k, t, row, col]
        return ViewPixelBatch(plane=torch.as_tensor(plane, dtype=dtype),
                              view=torch.as_tensor(k),
                              t=torch.as_tensor(t),
                              target=torch.as_tensor(target, dtype=dtype))
    raise DataError(f"unsupported dataset type {type(dataset).__name__}")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    network: FieldNetwork
    adam: AdamState
    iteration: int
    config: TrainConfig
    loss_tail: list = field(default_factory=list)
    rng_state: bytes = b""
    pose_rotations: "torch.Tensor | None" = None
    pose_translations: "torch.Tensor | None" = None

    @property
    def config_hash(self):
        return config_hash(self.config)

    @property
    def view_poses(self):
        if self.pose_rotations is None:
            return None
        rot = self.pose_rotations.detach().double().numpy()
        trans = self.pose_translations.detach().double().numpy()
        return [ViewPose(rotation=rot[k], translation=trans[k]) for k in range(rot.shape[0])]


def _param_dict(net, pose_rotations=None, pose_translations=None):
    params = dict(net.named_parameters())
    if pose_rotations is not None:
        params["pose.rotations"] = pose_rotations
        params["pose.translations"] = pose_translations
    return params


_DTYPE_NAMES = {torch.float32: "f32", torch.float64: "f64"}
_NP_DTYPES = {"f32": "<f4", "f64": "<f8"}


def save_checkpoint(ckpt, path):
    """Serialize a checkpoint in the documented binary layout."""
    net = ckpt.network
    dtype_name = _DTYPE_NAMES[net.dtype]
    np_dtype = _NP_DTYPES[dtype_name]
    params = _param_dict(net, ckpt.pose_rotations, ckpt.pose_translations)
    names = list(params.keys())

    def flat(tensors):
        return np.concatenate([tensors[k].detach().cpu().numpy().ravel() for k in names]) \
            if names else np.zeros(0)

    param_flat = flatten_params(net).astype(np_dtype)
    k_views = 0 if ckpt.pose_rotations is None else int(ckpt.pose_rotations.shape[0])
    pose_rot = (ckpt.pose_rotations.detach().cpu().numpy().ravel().astype(np_dtype)
                if k_views else np.zeros(0, dtype=np_dtype))
    pose_trans = (ckpt.pose_translations.detach().cpu().numpy().ravel().astype(np_dtype)
                  if k_views else np.zeros(0, dtype=np_dtype))
    adam_m = flat(ckpt.adam.m).astype(np_dtype)
    adam_v = flat(ckpt.adam.v).astype(np_dtype)
    header = {
        "arch": {"seed": net.seed, "omega0": net.omega0,
                 "param_count": int(param_flat.size)},
        "dtype": dtype_name,
        "iteration": int(ckpt.iteration),
        "adam_step": int(ckpt.adam.step),
        "param_names": names,
        "n_views": k_views,
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config_hash,
        "loss_tail": ckpt.loss_tail[-100:],
        "rng_len": len(ckpt.rng_state),
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        f.write(param_flat.tobytes())
        f.write(pose_rot.tobytes())
        f.write(pose_trans.tobytes())
        f.write(adam_m.tobytes())
        f.write(adam_v.tobytes())
        f.write(ckpt.rng_state)


def load_checkpoint(path):
    require(os.path.isfile(path), f"missing checkpoint file: {path}")
    with open(path, "rb") as f:
        data = f.read()
    require(data[:4] == CHECKPOINT_MAGIC, f"{path} is not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<II", data[4:12])
    require(version == CHECKPOINT_VERSION,
            f"unsupported checkpoint version {version}")
    header = json.loads(data[12:12 + header_len].decode("utf-8"))
    config = TrainConfig.from_dict(header["config"])
    dtype_name = header["dtype"]
    np_dtype = np.dtype(_NP_DTYPES[dtype_name])
    torch_dtype = torch.float64 if dtype_name == "f64" else torch.float32
    net = init_network(header["arch"]["seed"], omega0=header["arch"]["omega0"],
                       dtype=torch_dtype)
    offset = 12 + header_len

    def take(count):
        nonlocal offset
        nbytes = count * np_dtype.itemsize
        require(offset + nbytes <= len(data), f"checkpoint {path} is truncated")
        arr = np.frombuffer(data[offset:offset + nbytes], dtype=np_dtype)
        offset += nbytes
        return arr

    n_params = header["arch"]["param_count"]
    load_flat_params_(net, take(n_params))
    k = header["n_views"]
    pose_rot = pose_trans = None
    if k:
        pose_rot = torch.as_tensor(take(3 * k).reshape(k, 3).copy(), dtype=torch_dtype)
        pose_trans = torch.as_tensor(take(3 * k).reshape(k, 3).copy(), dtype=torch_dtype)
        pose_rot.requires_grad_(True)
        pose_trans.requires_grad_(True)
    params = _param_dict(net, pose_rot, pose_trans)
    require(list(params.keys()) == header["param_names"],
            f"checkpoint {path} parameter names do not match this architecture")
    total = sum(p.numel() for p in params.values())
    adam_m_flat = take(total)
    adam_v_flat = take(total)
    adam = init_adam_state(params)
    adam.step = header["adam_step"]
    pos = 0
    for name, p in params.items():
        cnt = p.numel()
        adam.m[name].copy_(torch.as_tensor(adam_m_flat[pos:pos + cnt].reshape(tuple(p.shape)).copy()))
        adam.v[name].copy_(torch.as_tensor(adam_v_flat[pos:pos + cnt].reshape(tuple(p.shape)).copy()))
        pos += cnt
    rng_state = data[offset:offset + header["rng_len"]]
    require(len(rng_state) == header["rng_len"], f"checkpoint {path} is truncated")
    return Checkpoint(network=net, adam=adam, iteration=header["iteration"],
                      config=config, loss_tail=header["loss_tail"],
                      rng_state=rng_state, pose_rotations=pose_rot,
                      pose_translations=pose_trans)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def _pose_masks(n_views, config, dtype):
    rot = torch.full((n_views, 1), 1.0 if config.pose_rotation_trainable else 0.0, dtype=dtype)
    trans = torch.full((n_views, 1), 1.0 if config.pose_translation_trainable else 0.0, dtype=dtype)
    if config.pose_freeze_first:
        # the first view anchors the global rigid gauge
        rot[0] = 0.0
        trans[0] = 0.0
    return rot, trans


def train(config, dataset, out_dir=None, resume=None):
    """Run the optimization and return the final Checkpoint.

    Args:
        config: TrainConfig.
        dataset: VolumeSequence or MultiViewSequence.
        out_dir: when given, writes checkpoint.bin, loss_log.csv, and any
            cadence checkpoints there.
        resume: a Checkpoint or checkpoint path to continue from; the stored
            config hash must match (bit-exact continuation).

    Raises:
        NumericalError: a loss term or update became non-finite (the message
            names the term).
    """
    torch.set_num_threads(config.threads)
    is_2d = isinstance(dataset, MultiViewSequence)
    dtype = config.torch_dtype
    weights = config.weights

    if resume is not None:
        ckpt = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        require(ckpt.config_hash == config_hash(config),
                "resume checkpoint was produced by a different config")
        net = ckpt.network
        pose_rot, pose_trans = ckpt.pose_rotations, ckpt.pose_translations
        adam = ckpt.adam
        start_iter = ckpt.iteration
        generator = torch.Generator()
        generator.set_state(torch.frombuffer(bytearray(ckpt.rng_state), dtype=torch.uint8).clone())
        loss_rows = [tuple(row) for row in ckpt.loss_tail]
    else:
        net = init_network(config.seed, dtype=dtype)
        pose_rot = pose_trans = None
        if is_2d:
            pose_rot = torch.as_tensor(dataset.initial_rotations, dtype=dtype).clone().requires_grad_(True)
            pose_trans = torch.as_tensor(dataset.initial_translations, dtype=dtype).clone().requires_grad_(True)
        params = _param_dict(net, pose_rot, pose_trans)
        adam = init_adam_state(params)
        start_iter = 0
        generator = torch.Generator()
        generator.manual_seed(config.seed)
        loss_rows = []

    params = _param_dict(net, pose_rot, pose_trans)
    if is_2d:
        rot_mask, trans_mask = _pose_masks(dataset.n_views, config, dtype)

    log_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        log_path = os.path.join(out_dir, "loss_log.csv")
        log_file = open(log_path, "a" if resume is not None else "w",
                        encoding="utf-8", newline="")
        if resume is None:
            log_file.write("iteration,lr,image,motion,cycle,reg,total\n")

    try:
        for i in range(start_iter, config.iterations):
            lr = cosine_lr(i, config)
            raw = sample_batch(generator, dataset, config.batch_points, dtype,
                               config.frame_stride)
            physics = None
            if is_2d:
                X = apply_poses(pose_rot, pose_trans, raw.plane, raw.view)
                # pixels of a tilted plane can leave the unit cube; the
                # renderer shows zero background there, which says nothing
                # about the field, so those samples are dropped rather than
                # letting them torque the poses against extrapolated values
                with torch.no_grad():
                    inside = ((X >= 0.0) & (X <= 1.0)).all(dim=1)
                require(bool(inside.any()),
                        "every sampled view pixel maps outside the unit cube; "
                        "check the view poses")
                X, t_in, target_in = X[inside], raw.t[inside], raw.target[inside]
                batch = PointBatch(X=X, t=t_in, target=target_in,
                                   period_T=dataset.period_T)
                physics = PointBatch(X=X.detach(), t=t_in, target=target_in,
                                     period_T=dataset.period_T)
            else:
                batch = raw
            for p in params.values():
                p.grad = None
            total, breakdown = total_loss(
                net, batch, weights,
                use_motion=config.use_motion_loss,
                use_cycle=config.use_cycle_loss,
                use_reg=config.use_reg_loss,
                cycle_fraction=config.cycle_fraction,
                physics_batch=physics)
            total.backward()
            grads = {name: (p.grad if p.grad is not None else torch.zeros_like(p))
                     for name, p in params.items()}
            if is_2d:
                grads["pose.rotations"] = grads["pose.rotations"] * rot_mask
                grads["pose.translations"] = grads["pose.translations"] * trans_mask
            if config.grad_clip > 0.0:
                norm = torch.sqrt(sum((g.double() ** 2).sum() for g in grads.values()))
                if float(norm) > config.grad_clip:
                    scale = config.grad_clip / float(norm)
                    grads = {k: g * scale for k, g in grads.items()}
            adam_step(params, grads, adam, lr)
            row = (i, lr, breakdown.image, breakdown.motion, breakdown.cycle,
                   breakdown.reg, breakdown.total)
            loss_rows.append(row)
            if log_file is not None:
                log_file.write(",".join(repr(v) if isinstance(v, float) else str(v)
                                        for v in row) + "\n")
            if i % 500 == 0 or i == config.iterations - 1:
                logger.info("iter %d lr %.3e total %.6f", i, lr, breakdown.total)
            done = i + 1
            if (out_dir is not None and config.ckpt_every > 0
                    and done % config.ckpt_every == 0 and done < config.iterations):
                log_file.flush()
                partial = Checkpoint(network=net, adam=adam, iteration=done,
                                     config=config, loss_tail=[list(r) for r in loss_rows[-100:]],
                                     rng_state=bytes(generator.get_state().numpy().tobytes()),
                                     pose_rotations=pose_rot, pose_translations=pose_trans)
                save_checkpoint(partial, os.path.join(out_dir, f"checkpoint_{done:07d}.bin"))
    finally:
        if log_file is not None:
            log_file.close()

    ckpt = Checkpoint(network=net, adam=adam, iteration=config.iterations,
                      config=config, loss_tail=[list(r) for r in loss_rows[-100:]],
                      rng_state=bytes(generator.get_state().numpy().tobytes()),
                      pose_rotations=pose_rot, pose_translations=pose_trans)
    if out_dir is not None:
        save_checkpoint(ckpt, os.path.join(out_dir, "checkpoint.bin"))
    return ckpt
