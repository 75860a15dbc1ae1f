"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines alongside the pytest verdicts.
"""

import math
import time

import numpy as np
import pytest
import torch
from torch.optim import Adam

from depthcod import bench, data, losses, metrics, training, uncertainty
from depthcod.errors import BadShape
from depthcod.generator import build_variant

import oracles
from conftest import tiny_config

LN2 = math.log(2.0)


def _verdict(number, label, ok):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {label}")
    assert ok, f"criterion {number} failed: {label}"


def _fd_ok(analytic, fn, x, tol=1e-3):
    numeric = oracles.central_difference(fn, x)
    return oracles.max_relative_error(analytic, numeric) < tol


def test_criterion_1_gradient_correctness():
    started = time.monotonic()
    gen = torch.Generator().manual_seed(100)

    def rand(shape, lo=0.0, hi=1.0):
        return torch.rand(*shape, generator=gen, dtype=torch.float64) * (hi - lo) + lo

    ok = True

    logits = torch.randn(1, 1, 8, 8, generator=gen, dtype=torch.float64,
                         requires_grad=True)
    target = (rand((1, 1, 8, 8)) > 0.5).double()
    losses.structure_aware_loss(logits, target)[0].backward()
    ok &= _fd_ok(logits.grad,
                 lambda t: losses.structure_aware_loss(t, target)[0],
                 logits.detach())

    pred = rand((1, 1, 8, 8), 0.05, 0.95).requires_grad_(True)
    depth_target = rand((1, 1, 8, 8))
    losses.depth_loss(pred, depth_target).backward()
    ok &= _fd_ok(pred.grad, lambda t: losses.depth_loss(t, depth_target),
                 pred.detach())

    score_rgb = torch.randn(1, 1, 8, 8, generator=gen, dtype=torch.float64,
                            requires_grad=True)
    score_rgbd = torch.randn(1, 1, 8, 8, generator=gen, dtype=torch.float64)
    losses.adversarial_loss(score_rgb, score_rgbd).backward()
    ok &= _fd_ok(score_rgb.grad,
                 lambda t: losses.adversarial_loss(t, score_rgbd),
                 score_rgb.detach())

    map_rgb = rand((1, 1, 8, 8)).requires_grad_(True)
    map_rgbd = rand((1, 1, 8, 8)).requires_grad_(True)
    w_rgb = rand((1, 1, 8, 8))
    w_rgbd = 1.0 - w_rgb
    losses.confidence_weighted_loss(map_rgb, map_rgbd, w_rgb, w_rgbd).backward()
    ok &= _fd_ok(map_rgb.grad,
                 lambda t: losses.confidence_weighted_loss(t, map_rgbd.detach(),
                                                           w_rgb, w_rgbd),
                 map_rgb.detach())
    ok &= _fd_ok(map_rgbd.grad,
                 lambda t: losses.confidence_weighted_loss(map_rgb.detach(), t,
                                                           w_rgb, w_rgbd),
                 map_rgbd.detach())

    elapsed = time.monotonic() - started
    ok &= elapsed < 30.0
    _verdict(1, f"loss gradients match central differences (rel < 1e-3, "
                f"{elapsed:.1f}s < 30s)", ok)


def test_criterion_2_confidence_and_weight_invariants():
    gen = torch.Generator().manual_seed(101)
    ok = True
    for _ in range(1000):
        p_rgb = torch.rand(6, 6, generator=gen, dtype=torch.float64)
        p_rgbd = torch.rand(6, 6, generator=gen, dtype=torch.float64)
        c_rgb = uncertainty.confidence(p_rgb)
        c_rgbd = uncertainty.confidence(p_rgbd)
        ok &= bool((c_rgb.min() >= 0) and (c_rgb.max() <= 1))
        ok &= bool((c_rgbd.min() >= 0) and (c_rgbd.max() <= 1))
        w_rgb, w_rgbd = uncertainty.modal_weights(c_rgb, c_rgbd)
        ok &= bool(((w_rgb + w_rgbd) - 1.0).abs().max() < 1e-6)
        if not ok:
            break
    ok &= uncertainty.entropy(torch.tensor(0.5, dtype=torch.float64)).item() == 1.0
    conf = uncertainty.confidence(torch.tensor(0.25, dtype=torch.float64)).item()
    ok &= abs(conf - (1.0 - oracles.binary_entropy_bits(0.25))) < 1e-12
    ok &= abs(conf - 0.188722) < 1e-6
    _verdict(2, "confidence/weight invariants over 1000 random map pairs "
                "(sum-to-one < 1e-6, entropy(0.5)=1, confidence(0.25)=0.188722)", ok)


def test_criterion_3_loss_identities():
    gen = torch.Generator().manual_seed(102)
    d = torch.rand(1, 1, 16, 16, generator=gen, dtype=torch.float64)
    x = torch.rand(1, 1, 16, 16, generator=gen, dtype=torch.float64)
    ok = abs(losses.depth_loss(d, d).item()) < 1e-6
    ok &= abs(losses.ssim(x, x).item() - 1.0) < 1e-6

    cod, depth, adv = 0.7312, 0.2281, 1.4142
    total = losses.generator_loss(cod, depth, adv)
    ok &= abs(total - (cod + depth + 0.1 * adv)) < 1e-6
    ok &= losses.ADV_WEIGHT == 0.1

    zero = torch.zeros(1, 1, 4, 4, dtype=torch.float64)
    dis = losses.discriminator_loss(zero, zero, zero).item()
    ok &= abs(dis - 3.0 * LN2) < 1e-6
    _verdict(3, "loss identities (depth self-loss 0, ssim self 1, generator "
                "total recombines at 0.1, discriminator-at-zero 3*ln2)", ok)


def test_criterion_4_metric_oracle_equivalence():
    started = time.monotonic()
    rng = np.random.default_rng(103)
    ok = True
    for i in range(1000):
        h = int(rng.integers(4, 9))
        w = int(rng.integers(4, 9))
        p = rng.random((h, w))
        kind = i % 10
        if kind == 8:
            y = np.zeros((h, w))
        elif kind == 9:
            y = np.ones((h, w))
        else:
            y = (rng.random((h, w)) > 0.5).astype(np.float64)
        ok &= abs(metrics.mae(p, y) - oracles.mae_reference(p, y)) < 1e-9
        ok &= abs(metrics.f_measure_mean(p, y) - oracles.f_measure_reference(p, y)) < 1e-9
        ok &= abs(metrics.e_measure_mean(p, y) - oracles.e_measure_reference(p, y)) < 1e-9
        ok &= abs(metrics.s_measure(p, y) - oracles.s_measure_reference(p, y)) < 1e-6
        if not ok:
            break
    elapsed = time.monotonic() - started
    ok &= elapsed < 120.0
    _verdict(4, f"MAE/F/E within 1e-9 and S within 1e-6 of brute-force oracles "
                f"on 1000 random pairs ({elapsed:.1f}s < 120s)", ok)


def test_criterion_5_overfit_smoke(toy_root, tmp_path):
    started = time.monotonic()
    config = tiny_config(toy_root, tmp_path / "overfit", epochs=100,
                         max_steps=200, checkpoint_every=100)
    ckpt, _ = training.train(config)
    state = training.load_checkpoint(ckpt)
    model, _ = training.build_from_checkpoint(state)
    report = metrics.evaluate(model, data.load_manifest(toy_root), size=64)
    elapsed = time.monotonic() - started
    ok = report.mae < 0.05 and report.f_measure > 0.9 and elapsed < 300.0
    _verdict(5, f"full variant memorizes 10 samples in 200 steps "
                f"(MAE {report.mae:.4f} < 0.05, F {report.f_measure:.4f} > 0.9, "
                f"{elapsed:.0f}s < 300s)", ok)


def test_criterion_6_alternation_isolation(toy_root):
    import hashlib

    def digest(module):
        h = hashlib.sha256()
        for _, p in sorted(module.state_dict().items()):
            h.update(p.detach().cpu().numpy().tobytes())
        return h.hexdigest()

    torch.manual_seed(104)
    model, disc = build_variant("full", backbone="tiny")
    model.train()
    disc.train()
    opt_g = Adam(model.parameters(), lr=1e-3)
    opt_d = Adam(disc.parameters(), lr=1e-3)
    config = tiny_config(toy_root, "unused", batch_size=3)
    manifest = data.load_manifest(toy_root)
    samples = [data.load_sample(manifest, i, 64) for i in range(3)]
    batch = data.collate(samples)
    rng = torch.Generator().manual_seed(104)

    ok = True
    for _ in range(50):
        disc_before = digest(disc)
        x, d, y = batch.image, batch.depth, batch.mask
        z = model.sample_latent(x.shape[0], rng=rng)
        zf = model.sample_latent(x.shape[0], rng=rng)
        bundle = model(x, z=z, z_fused=zf)
        probs_rgb, probs_rgbd = uncertainty.sample_predictions(model, x, 2, rng=rng)
        conf = uncertainty.confidence_from_samples(probs_rgb, probs_rgbd)
        _, map_rgb = losses.structure_aware_loss(bundle.rgb_logits, y)
        _, map_rgbd = losses.structure_aware_loss(bundle.rgbd_logits, y)
        l_gen = losses.generator_loss(
            losses.confidence_weighted_loss(map_rgb, map_rgbd,
                                            conf.weight_rgb, conf.weight_rgbd),
            losses.depth_loss(bundle.depth, d),
            losses.adversarial_loss(disc(x, bundle.rgb_prob),
                                    disc(x, bundle.rgbd_prob)))
        opt_g.zero_grad()
        l_gen.backward()
        opt_g.step()
        ok &= digest(disc) == disc_before

        gen_mid = digest(model)
        l_dis = losses.discriminator_loss(disc(x, y),
                                          disc(x, bundle.rgb_prob.detach()),
                                          disc(x, bundle.rgbd_prob.detach()))
        opt_d.zero_grad()
        l_dis.backward()
        opt_d.step()
        ok &= digest(model) == gen_mid
        if not ok:
            break
    _verdict(6, "50 alternating steps never cross-modify generator and "
                "discriminator parameters (checksum audit)", ok)


def test_criterion_7_variant_plumbing(toy_root, tmp_path):
    audits = {v: bench.param_audit(v) for v in ("base", "ade", "a_d", "full")}
    ok = set(audits["base"]) == {"rgb_encoder", "rgb_decoder"}
    ok &= set(audits["ade"]) == set(audits["base"]) | {"depth_encoder", "depth_decoder"}
    ok &= set(audits["a_d"]) == set(audits["ade"]) | {"fusion"}
    ok &= set(audits["full"]) == set(audits["a_d"]) | {"latent", "discriminator"}
    chain = [audits[v] for v in ("base", "ade", "a_d", "full")]
    for smaller, larger in zip(chain, chain[1:]):
        ok &= all(larger[g] == c for g, c in smaller.items())

    early_model, _ = build_variant("early", backbone="tiny")
    ok &= early_model.input_fuse.in_channels == 4

    base_cfg = tiny_config(toy_root, tmp_path, epochs=3, max_steps=3,
                           checkpoint_every=3)
    for kind in ("ablation", "fusion"):
        rows, _ = bench.run_grid(bench.make_grid(kind), base_cfg,
                                 tmp_path / f"grid_{kind}")
        ok &= all(row.status == "OK" for row in rows)
        ok &= all(0.0 <= row.f_beta <= 1.0 and 0.0 <= row.mae <= 1.0
                  for row in rows)
    _verdict(7, "parameter audit matches the capability matrix, early fusion "
                "consumes 4 channels, both grids complete with metrics in [0,1]", ok)


def test_criterion_8_determinism(toy_root, tmp_path):
    csvs = []
    for name in ("d1", "d2"):
        cfg = tiny_config(toy_root, tmp_path / name, epochs=1)
        _, csv_path = training.train(cfg)
        csvs.append(csv_path.read_bytes())
    ok = csvs[0] == csvs[1]

    from depthcod.archive import load_archive, save_archive
    cfg = tiny_config(toy_root, tmp_path / "rt", epochs=1)
    ckpt, _ = training.train(cfg)
    tensors, meta = load_archive(ckpt)
    resaved = tmp_path / "resaved.ckpt"
    save_archive(resaved, tensors, meta)
    ok &= resaved.read_bytes() == ckpt.read_bytes()

    full_cfg = tiny_config(toy_root, tmp_path / "u2", epochs=2)
    _, full_csv = training.train(full_cfg)
    part_cfg = tiny_config(toy_root, tmp_path / "u1", epochs=1)
    part_ckpt, _ = training.train(part_cfg)
    resumed_cfg = tiny_config(toy_root, tmp_path / "ur", epochs=2)
    _, resumed_csv = training.train(resumed_cfg, resume_from=part_ckpt)
    epoch1 = [l for l in full_csv.read_text().splitlines() if l.startswith("1,")]
    resumed = [l for l in resumed_csv.read_text().splitlines() if l.startswith("1,")]
    ok &= bool(epoch1) and epoch1 == resumed
    _verdict(8, "seeded loss CSV bitwise reproducible, checkpoint round-trips "
                "bit-exactly, resume matches the uninterrupted epoch bitwise", ok)


def test_criterion_9_shape_sweep():
    torch.manual_seed(105)
    model, disc = build_variant("full", backbone="tiny")
    model.eval()
    ok = True
    with torch.no_grad():
        for size in (64, 352, 416, 480):
            x = torch.randn(1, 3, size, size)
            z = torch.zeros(1, model.latent_dim)
            bundle = model(x, z=z, z_fused=z)
            ok &= bundle.rgb_logits.shape[-2:] == (size, size)
            ok &= bundle.rgbd_logits.shape[-2:] == (size, size)
            ok &= bundle.depth.shape[-2:] == (size, size)
            score = disc(x, bundle.rgbd_prob)
            ok &= score.shape[-2:] == (size // 32, size // 32)
        for bad in (100, 350, 63):
            with pytest.raises(BadShape):
                model(torch.randn(1, 3, bad, bad),
                      z=torch.zeros(1, model.latent_dim),
                      z_fused=torch.zeros(1, model.latent_dim))
    _verdict(9, "all heads emit input-resolution maps for sizes 64/352/416/480 "
                "and sizes not divisible by 32 raise BadShape", ok)


def test_criterion_10_gan_sanity(toy_root):
    torch.manual_seed(106)
    model, disc = build_variant("full", backbone="tiny")
    model.eval()
    manifest = data.load_manifest(toy_root)
    batch = data.collate([data.load_sample(manifest, i, 64) for i in range(5)])
    x, y = batch.image, batch.mask
    zeros = torch.zeros(x.shape[0], model.latent_dim)
    with torch.no_grad():
        bundle = model(x, z=zeros, z_fused=zeros)
        fake_rgb, fake_rgbd = bundle.rgb_prob, bundle.rgbd_prob
    opt = Adam(disc.parameters(), lr=1e-3)
    for _ in range(50):
        loss = losses.discriminator_loss(disc(x, y), disc(x, fake_rgb),
                                         disc(x, fake_rgbd))
        opt.zero_grad()
        loss.backward()
        opt.step()
    with torch.no_grad():
        real = torch.sigmoid(disc(x, y)).mean().item()
        fake = 0.5 * (torch.sigmoid(disc(x, fake_rgb)).mean().item()
                      + torch.sigmoid(disc(x, fake_rgbd)).mean().item())
    ok = real > fake
    _verdict(10, f"after 50 discriminator steps on a frozen generator, mean "
                 f"real score {real:.3f} > mean fake score {fake:.3f}", ok)
