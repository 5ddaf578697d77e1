"""End-to-end acceptance gate.

Each test prints one [PASS]/[FAIL] line (visible without -s) and then asserts.
The phantom recovery run (criterion 2) trains the full 5000-iteration model
once and is reused by the ablation, strain, and invariant checks, so the
module takes tens of minutes on one CPU core. Run the unit-test files for a
fast signal; run this module for the full gate.
"""

import json
import math
import time

import numpy as np
import pytest
import torch
from scipy.spatial.transform import Rotation

from neuralcmf.cli import main
from neuralcmf.field_network import coord_jacobian, eval_field, init_network
from neuralcmf.geometry import rotation_angle_between
from neuralcmf.losses import (LossWeights, PointBatch, cycle_consistency_loss,
                              image_loss, motion_consistency_loss,
                              regularization_loss, total_loss)
from neuralcmf.metrics import (boundary_voxels, hausdorff, motion_cosine, mte,
                               normalized_to_voxel, overlap_metrics)
from neuralcmf.strain import (lagrangian_strain, local_directions,
                              peak_global_strains, strain_at, strain_curves,
                              aha_assign)
from neuralcmf.tracking import (cycle_residuals, phantom_step_motion_pairs,
                                warp_mask)
from neuralcmf.trainer import (TrainConfig, adam_step, cosine_lr,
                               init_adam_state, load_checkpoint, train)
from neuralcmf.volume_io import (PhantomSpec, generate_phantom, load_manifest,
                                 phantom_endocardial_points, phantom_scale,
                                 phantom_shell_mask, phantom_shell_points,
                                 write_phantom_dataset)

_CACHE = {}


def announce(label, ok, detail):
    print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    return ok


# ---------------------------------------------------------------------------
# Shared phantom runs (trained once, reused below)
# ---------------------------------------------------------------------------

def recovery_phantom():
    if "spec" not in _CACHE:
        _CACHE["spec"] = PhantomSpec()            # 32^3 grid, T=8, A=0.2
        _CACHE["seq"] = generate_phantom(_CACHE["spec"])
    return _CACHE["spec"], _CACHE["seq"]


def evaluate_phantom(net, spec):
    """The shared tracking protocol: 1250 shell points per frame transition."""
    dims = np.asarray(spec.grid_dims, dtype=np.float64)
    pred, gt = phantom_step_motion_pairs(net, spec, 1250, seed=123)
    pred_vox = normalized_to_voxel(pred, dims)
    gt_vox = normalized_to_voxel(gt, dims)
    return {"mte": mte(pred_vox, gt_vox, 1.0),
            "cosine": motion_cosine(pred_vox, gt_vox).mean,
            "n_pairs": pred.shape[0]}


def full_run(tmp_factory):
    if "full" not in _CACHE:
        spec, seq = recovery_phantom()
        out = tmp_factory.mktemp("recovery_run")
        config = TrainConfig(iterations=5000, batch_points=4096, seed=0)
        t0 = time.time()
        ckpt = train(config, seq, out_dir=out)
        _CACHE["full"] = {"ckpt": ckpt, "net": ckpt.network,
                          "runtime_s": time.time() - t0, "out": out,
                          **evaluate_phantom(ckpt.network, spec)}
    return _CACHE["full"]


def ablated_run():
    if "ablated" not in _CACHE:
        spec, seq = recovery_phantom()
        config = TrainConfig(iterations=5000, batch_points=4096, seed=0,
                             use_motion_loss=False, use_cycle_loss=False)
        ckpt = train(config, seq)
        _CACHE["ablated"] = {"net": ckpt.network,
                             **evaluate_phantom(ckpt.network, spec)}
    return _CACHE["ablated"]


# ---------------------------------------------------------------------------
# 1. Analytic gradients vs central finite differences
# ---------------------------------------------------------------------------

def _jittered_net(seed):
    # Heads get a small random offset: enough to make every gradient path
    # active (zero-init heads would zero out the motion terms), small enough
    # that composed trajectories stay far from the divergence clamp box, so
    # the central differences below sit in their asymptotic regime.
    net = init_network(seed=seed, dtype=torch.float64)
    g = torch.Generator().manual_seed(seed + 9000)
    with torch.no_grad():
        for p in net.parameters():
            p.mul_(1.0 + 0.1 * torch.rand(p.shape, generator=g, dtype=p.dtype))
        for head in (net.intensity_head, net.fwd_head, net.bwd_head):
            for p in head.parameters():
                p.add_(0.01 * (torch.rand(p.shape, generator=g, dtype=p.dtype) - 0.5))
    return net


def _random_batch(seed, n=6):
    g = torch.Generator().manual_seed(seed)
    T = int(torch.randint(4, 9, (1,), generator=g))
    X = 0.3 + 0.4 * torch.rand((n, 3), generator=g, dtype=torch.float64)
    t = torch.randint(0, T, (n,), generator=g)
    target = torch.rand((n,), generator=g, dtype=torch.float64)
    w = LossWeights(alpha1=float(0.5 + torch.rand((), generator=g)),
                    alpha2=float(0.05 + 0.2 * torch.rand((), generator=g)),
                    alpha3=float(0.005 + 0.02 * torch.rand((), generator=g)))
    return PointBatch(X, t, target, T), w


def _term_rel_error(net, term_fn, seed):
    value = term_fn()
    params = [p for p in net.parameters()]
    grads = torch.autograd.grad(value, params, allow_unused=True)
    g = np.random.default_rng(seed)
    order = g.permutation(len(params))
    p = grad = None
    for k in order:
        if grads[k] is None:
            continue
        flat = grads[k].reshape(-1)
        big = torch.nonzero(flat.abs() > 1e-6).reshape(-1)
        if big.numel():
            idx = int(big[int(g.integers(big.numel()))])
            p, grad = params[k], float(flat[idx])
            break
    if p is None:
        k = int(order[0])
        flat = grads[k].reshape(-1)
        idx = int(flat.abs().argmax())
        p, grad = params[k], float(flat[idx])
    h = 1e-5
    with torch.no_grad():
        orig = float(p.reshape(-1)[idx])
        p.reshape(-1)[idx] = orig + h
        f_plus = float(term_fn().detach())
        p.reshape(-1)[idx] = orig - h
        f_minus = float(term_fn().detach())
        p.reshape(-1)[idx] = orig
    fd = (f_plus - f_minus) / (2.0 * h)
    return abs(grad - fd) / max(abs(grad), abs(fd), 1e-8)


def _jacobian_rel_error(net, seed):
    g = torch.Generator().manual_seed(seed)
    X = 0.2 + 0.6 * torch.rand((3,), generator=g, dtype=torch.float64)
    t_norm = float(torch.rand((), generator=g))
    J = coord_jacobian(net, X, t_norm)
    a, b = int(torch.randint(0, 3, (1,), generator=g)), int(torch.randint(0, 3, (1,), generator=g))
    h = 1e-5
    e = torch.zeros(3, dtype=torch.float64)
    e[b] = h
    with torch.no_grad():
        f_plus = float(eval_field(net, X + e, t_norm).m_fwd[0, a])
        f_minus = float(eval_field(net, X - e, t_norm).m_fwd[0, a])
    fd = (f_plus - f_minus) / (2.0 * h)
    return abs(float(J[a, b]) - fd) / max(abs(float(J[a, b])), abs(fd), 1e-8)


def test_gradients_match_finite_differences(capsys):
    t0 = time.time()
    worst = 0.0
    n_configs = 102
    for i in range(n_configs):
        net = _jittered_net(seed=200 + i)
        batch, w = _random_batch(seed=500 + i)
        kind = i % 6
        if kind == 5:
            rel = _jacobian_rel_error(net, seed=800 + i)
        else:
            term_fn = {
                0: lambda: image_loss(net, batch),
                1: lambda: motion_consistency_loss(net, batch, w),
                2: lambda: cycle_consistency_loss(net, batch, w),
                3: lambda: regularization_loss(net, batch),
                4: lambda: total_loss(net, batch, w)[0],
            }[kind]
            rel = _term_rel_error(net, term_fn, seed=900 + i)
        worst = max(worst, rel)
    elapsed = time.time() - t0
    ok = worst <= 1e-4 and elapsed <= 60.0
    with capsys.disabled():
        announce("criterion 1", ok,
                 f"gradients vs central differences on {n_configs} configs, "
                 f"max rel err {worst:.2e} (limit 1e-4), {elapsed:.1f}s (limit 60s)")
    assert ok


# ---------------------------------------------------------------------------
# 2. Phantom recovery at full training budget
# ---------------------------------------------------------------------------

def test_phantom_motion_recovery(capsys, tmp_path_factory):
    spec, _ = recovery_phantom()
    run = full_run(tmp_path_factory)
    residual = float(np.mean(cycle_residuals(run["net"], spec, 2000, seed=321)))
    T = spec.period_T
    ed = phantom_shell_mask(spec, 0)
    es = phantom_shell_mask(spec, T // 2)
    warped = warp_mask(run["net"], ed, 0, T // 2, T)
    dice = overlap_metrics(warped.grid, es).dice
    run["residual"], run["dice"] = residual, dice
    ok = (run["n_pairs"] == 10000 and run["mte"] <= 0.8
          and run["cosine"] >= 0.90 and residual <= 0.02 and dice >= 0.90)
    with capsys.disabled():
        announce("criterion 2", ok,
                 f"phantom recovery: MTE {run['mte']:.3f} vox (limit 0.8), "
                 f"cosine {run['cosine']:.3f} (floor 0.90), "
                 f"cycle residual {residual:.4f} (limit 0.02), "
                 f"ED->ES dice {dice:.3f} (floor 0.90), "
                 f"train {run['runtime_s'] / 60:.1f} min (target 30, not asserted)")
    assert ok


# ---------------------------------------------------------------------------
# 3. Disabling the motion losses must break tracking
# ---------------------------------------------------------------------------

def test_motion_losses_ablation_degrades_tracking(capsys, tmp_path_factory):
    full = full_run(tmp_path_factory)
    ablated = ablated_run()
    ratio = ablated["mte"] / full["mte"]
    ok = ratio >= 5.0
    with capsys.disabled():
        announce("criterion 3", ok,
                 f"ablated MTE {ablated['mte']:.3f} vox vs full {full['mte']:.3f} "
                 f"vox, ratio {ratio:.2f} (floor 5.0)")
    assert ok


# ---------------------------------------------------------------------------
# 4. Sweep command: grids, reports, default ranking
# ---------------------------------------------------------------------------

def test_hyperparameter_sweep_ranks_defaults(capsys, tmp_path_factory):
    root = tmp_path_factory.mktemp("sweeps")
    spec, _ = recovery_phantom()
    data_dir = root / "data"
    write_phantom_dataset(spec, data_dir)
    manifest = data_dir / "manifest.json"
    budget = ["--iters", "1200", "--batch", "2048", "--eval-points", "1500",
              "--seed", "0"]
    ranks = {}
    for param in ("alpha1", "alpha2", "alpha3"):
        out = root / f"sweep_{param}"
        code = main(["sweep", "--data", str(manifest), "--out", str(out),
                     "--param", param, "--values", "0.01,0.1,1,2"] + budget)
        assert code == 0
        with open(out / "sweep_summary.json") as f:
            summary = json.load(f)
        assert len(summary["cells"]) == 4
        for cell in summary["cells"]:
            assert (out / cell["label"] / "metrics.json").is_file()
        ranks[param] = summary["default_rank"]
    out = root / "sweep_losses"
    code = main(["sweep", "--data", str(manifest), "--out", str(out),
                 "--param", "losses",
                 "--values", "full,no-motion,no-cycle,no-reg,image-only"]
                + budget)
    assert code == 0
    with open(out / "sweep_summary.json") as f:
        toggles = json.load(f)
    assert len(toggles["cells"]) == 5
    ok = all(r is not None and r <= 2 for r in ranks.values())
    with capsys.disabled():
        announce("criterion 4", ok,
                 "sweep grids emitted one report per cell; default cell rank "
                 + ", ".join(f"{p}={r}" for p, r in ranks.items())
                 + " (each must be <= 2); loss toggles emitted 5 cells")
    assert ok


# ---------------------------------------------------------------------------
# 5. Strain: analytic phantom peak and exact tensor algebra
# ---------------------------------------------------------------------------

def test_strain_matches_analytic_contraction(capsys, tmp_path_factory):
    spec, _ = recovery_phantom()
    run = full_run(tmp_path_factory)
    T = spec.period_T
    points, apex, base_z = phantom_endocardial_points(spec, 2000)
    curves = strain_curves(run["net"], aha_assign(points, apex, base_z),
                           local_directions(points, axis_origin=spec.center), T)
    peak = peak_global_strains(curves)["radial"]["value"]
    s_min = phantom_scale(spec, T // 2)
    expected = (s_min ** 2 - 1.0) / 2.0
    rel = abs(peak - expected) / abs(expected)

    rots = Rotation.random(20, random_state=11).as_matrix()
    rot_err = max(float(np.abs(lagrangian_strain(R)).max()) for R in rots)

    E = lagrangian_strain(1.1 * np.eye(3))
    scale_err = float(np.abs(E - 0.105 * np.eye(3)).max())

    ok = rel <= 0.15 and rot_err <= 1e-10 and scale_err <= 1e-15
    with capsys.disabled():
        announce("criterion 5", ok,
                 f"peak radial strain {peak:.4f} vs analytic {expected:.2f} "
                 f"(rel err {rel:.3f}, limit 0.15); pure rotation residual "
                 f"{rot_err:.1e} (limit 1e-10); 1.1*I scaling err {scale_err:.1e}")
    assert ok


# ---------------------------------------------------------------------------
# 6. Metric implementations vs brute force
# ---------------------------------------------------------------------------

def _brute_hausdorff(mask_a, mask_b):
    pa = boundary_voxels(mask_a).astype(np.float64)
    pb = boundary_voxels(mask_b).astype(np.float64)
    d_ab = np.sqrt(((pa[:, None, :] - pb[None, :, :]) ** 2).sum(-1))
    return max(d_ab.min(axis=1).max(), d_ab.min(axis=0).max())


def test_metric_implementations_match_brute_force(capsys):
    rng = np.random.default_rng(42)
    n_h = 0
    for _ in range(5):
        a = (rng.random((16, 16, 16)) < 0.2).astype(np.uint8)
        b = (rng.random((16, 16, 16)) < 0.2).astype(np.uint8)
        assert hausdorff(a, b) == _brute_hausdorff(a, b)
        n_h += 1
    worst_identity = 0.0
    for _ in range(1000):
        a = (rng.random((6, 6, 6)) < 0.35).astype(np.uint8)
        b = (rng.random((6, 6, 6)) < 0.35).astype(np.uint8)
        r = overlap_metrics(a, b)
        inter = float(np.sum((a == 1) & (b == 1)))
        union = float(np.sum((a == 1) | (b == 1)))
        dice = 2.0 * inter / (a.sum() + b.sum())
        assert r.dice == dice
        if union:
            worst_identity = max(worst_identity,
                                 abs(r.jaccard - inter / union),
                                 abs(r.jaccard - r.dice / (2.0 - r.dice)))
    v = rng.normal(size=(500, 3))
    trivial = (mte(v, v.copy()) == 0.0
               and motion_cosine(v, v.copy()).mean == 1.0
               and motion_cosine(v, -v).mean == -1.0)
    ok = worst_identity <= 1e-12 and trivial
    with capsys.disabled():
        announce("criterion 6", ok,
                 f"hausdorff equals brute force on {n_h} random 16^3 pairs; "
                 f"jaccard identity on 1000 pairs (worst dev {worst_identity:.1e}); "
                 f"mte/cosine trivial cases exact")
    assert ok


# ---------------------------------------------------------------------------
# 7. Learning-rate schedule and optimizer oracles
# ---------------------------------------------------------------------------

def test_schedule_and_optimizer_oracles(capsys):
    config = TrainConfig(iterations=1000, lr0=1e-4)
    sched = (cosine_lr(0, config) == 1e-4
             and cosine_lr(500, config) == 5e-5
             and cosine_lr(1000, config) == 0.0)

    w = torch.zeros((), dtype=torch.float64)
    params = {"w": w}
    state = init_adam_state(params)
    m = v = 0.0
    x = 0.5
    worst = 0.0
    for step in range(1, 11):
        g_val = math.sin(step * 0.7) + 0.1
        adam_step(params, {"w": torch.tensor(g_val, dtype=torch.float64)},
                  state, lr=1e-2)
        m = 0.9 * m + 0.1 * g_val
        v = 0.999 * v + 0.001 * g_val * g_val
        m_hat = m / (1.0 - 0.9 ** step)
        v_hat = v / (1.0 - 0.999 ** step)
        x = x - 1e-2 * m_hat / (math.sqrt(v_hat) + 1e-8)
        worst = max(worst, abs(float(w) - (x - 0.5)))
    ok = sched and worst <= 1e-12
    with capsys.disabled():
        announce("criterion 7", ok,
                 f"cosine schedule anchors exact (1e-4 / 5e-5 / 0); 10-step "
                 f"Adam trace vs scalar oracle, max dev {worst:.1e} (limit 1e-12)")
    assert ok


# ---------------------------------------------------------------------------
# 8. Byte-level determinism of checkpoints and reports
# ---------------------------------------------------------------------------

def test_seeded_runs_are_byte_identical(capsys, tmp_path):
    data = tmp_path / "data"
    assert main(["phantom", "--out", str(data), "--dims", "12",
                 "--frames", "4"]) == 0
    manifest = data / "manifest.json"
    artifacts = []
    for name in ("a", "b"):
        run = tmp_path / name
        assert main(["train", "--data", str(manifest), "--out", str(run),
                     "--iters", "80", "--batch", "256", "--seed", "5"]) == 0
        track = tmp_path / f"{name}_track"
        assert main(["track", "--ckpt", str(run / "checkpoint.bin"),
                     "--data", str(manifest), "--out", str(track),
                     "--n-seeds", "100"]) == 0
        strain = tmp_path / f"{name}_strain"
        assert main(["strain", "--ckpt", str(run / "checkpoint.bin"),
                     "--data", str(manifest), "--out", str(strain),
                     "--n-points", "300"]) == 0
        artifacts.append([(run / "checkpoint.bin").read_bytes(),
                          (run / "loss_log.csv").read_bytes(),
                          (track / "trajectories.csv").read_bytes(),
                          (track / "track_report.json").read_bytes(),
                          (strain / "strain_curves.csv").read_bytes(),
                          (strain / "strain_summary.json").read_bytes()])
    ok = artifacts[0] == artifacts[1]
    with capsys.disabled():
        announce("criterion 8", ok,
                 "two seeded single-threaded runs: checkpoint, loss log, "
                 "trajectories, and all reports byte-identical")
    assert ok


# ---------------------------------------------------------------------------
# 9. Multi-view 2D mode: joint pose recovery
# ---------------------------------------------------------------------------

def test_multiview_pose_recovery(capsys, tmp_path_factory):
    spec, _ = recovery_phantom()
    root = tmp_path_factory.mktemp("multiview")
    manifest = write_phantom_dataset(spec, root, mode="multiview2d",
                                     n_views=8, image_hw=(48, 48),
                                     pose_jitter_deg=5.0, jitter_seed=2)
    dataset = load_manifest(manifest)
    init_err = max(math.degrees(rotation_angle_between(ri, rt)) for ri, rt in
                   zip(dataset.initial_rotations, dataset.true_rotations))
    config = TrainConfig(iterations=4000, batch_points=4096, seed=0)
    ckpt = train(config, dataset)
    pose_err = max(math.degrees(rotation_angle_between(pose.rotation, rt))
                   for pose, rt in zip(ckpt.view_poses,
                                       dataset.true_rotations))
    metrics = evaluate_phantom(ckpt.network, spec)
    ok = init_err <= 5.0 and pose_err <= 1.0 and metrics["mte"] <= 1.2
    with capsys.disabled():
        announce("criterion 9", ok,
                 f"8-view 2D mode: initial pose error {init_err:.2f} deg "
                 f"(<= 5), recovered {pose_err:.3f} deg (limit 1.0), "
                 f"MTE {metrics['mte']:.3f} vox (limit 1.2)")
    assert ok


# ---------------------------------------------------------------------------
# 10. Optional external ultrasound path
# ---------------------------------------------------------------------------

def test_external_ultrasound_sequence(capsys):
    with capsys.disabled():
        print("[SKIP] criterion 10: external ultrasound sequence not bundled "
              "(optional; needs downloaded data and GPU-scale training)")
    pytest.skip("optional external dataset not available in this environment")


# ---------------------------------------------------------------------------
# Derived invariants tied to the trained recovery run
# ---------------------------------------------------------------------------

def test_trained_run_invariants(capsys, tmp_path_factory):
    spec, _ = recovery_phantom()
    run = full_run(tmp_path_factory)
    T = spec.period_T

    ed = phantom_shell_mask(spec, 0)
    there = warp_mask(run["net"], ed, 0, T // 2, T)
    back = warp_mask(run["net"], there.grid, T // 2, 0, T)
    closure_dice = overlap_metrics(back.grid, ed).dice

    rows = (run["out"] / "loss_log.csv").read_text().strip().splitlines()
    header, data = rows[0].split(","), [r.split(",") for r in rows[1:]]
    col = header.index("total")
    total_at = {int(r[0]): float(r[col]) for r in data}
    loss_drop = total_at[max(total_at)] / total_at[10]

    pts = phantom_shell_points(spec, 200, t=2, seed=77)
    analytic_F = (phantom_scale(spec, 3) / phantom_scale(spec, 2)) * np.eye(3)
    errs = [float(np.abs(strain_at(run["net"], p, 2, T).F - analytic_F).max())
            for p in pts]
    f_err = float(np.median(errs))

    ok = closure_dice >= 0.95 and loss_drop < 0.10 and f_err <= 5e-3
    with capsys.disabled():
        announce("trained-run invariants", ok,
                 f"ED->ES->ED closure dice {closure_dice:.3f} (floor 0.95); "
                 f"final/iter-10 loss {loss_drop:.4f} (limit 0.10); median "
                 f"deformation-gradient error {f_err:.2e} (limit 5e-3)")
    assert ok
