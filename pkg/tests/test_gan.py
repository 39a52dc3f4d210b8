import json
import math
import zipfile

import numpy as np
import pytest
import torch

from semgan.errors import CheckpointError, ConfigError, ShapeError, TrainingDivergedError
from semgan.labels import collapse, validate_prob_volume
from semgan.nets import (
    DISCRIMINATOR_HEAD_PREFIX,
    GENERATOR_HEAD_PREFIX,
    ModelConfig,
    build_models,
    discriminator_forward,
    generator_forward,
    load_checkpoint,
    save_checkpoint,
)
from semgan.training import (
    TrainConfig,
    d_loss,
    feature_matching_loss,
    sample_latent,
    train_step,
    training_run,
)


def tiny_config(mode="semantic", image_size=16, num_classes=4):
    return ModelConfig(
        mode=mode,
        image_size=image_size,
        num_classes=num_classes,
        latent_dim=8,
        kernel_size=3,
        base_channels=4,
    )


def make_real(state, n, seed=0):
    cfg = state.config
    gen = np.random.default_rng(seed)
    if cfg.mode == "semantic":
        x = gen.random((n, cfg.image_size, cfg.image_size, cfg.num_classes)).astype(np.float32)
        return x / x.sum(-1, keepdims=True)
    return gen.random((n, cfg.image_size, cfg.image_size, 3)).astype(np.float32)


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(mode="semantic", image_size=30)  # not 4 * 2**depth
    with pytest.raises(ConfigError):
        ModelConfig(mode="semantic", image_size=32, kernel_size=4)
    with pytest.raises(ConfigError):
        ModelConfig(mode="semantic", image_size=32, num_classes=1)
    with pytest.raises(ConfigError):
        ModelConfig(mode="hsv", image_size=32)
    assert ModelConfig(mode="rgb", image_size=64).depth == 4


def test_generator_output_shapes():
    st = build_models(ModelConfig(mode="semantic", image_size=32, num_classes=4, latent_dim=16, kernel_size=3, base_channels=4), seed=0)
    out = generator_forward(st, np.zeros((2, 16), dtype=np.float32))
    assert out.shape == (2, 32, 32, 4)

    st_rgb = build_models(ModelConfig(mode="rgb", image_size=32, latent_dim=16, kernel_size=3, base_channels=4), seed=0)
    out = generator_forward(st_rgb, np.zeros((2, 16), dtype=np.float32))
    assert out.shape == (2, 32, 32, 3)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_build_is_deterministic():
    a = build_models(tiny_config(), seed=7)
    b = build_models(tiny_config(), seed=7)
    for k, pa in a.named_parameters().items():
        assert torch.equal(pa, b.named_parameters()[k])
    c = build_models(tiny_config(), seed=8)
    assert any(not torch.equal(pa, c.named_parameters()[k]) for k, pa in a.named_parameters().items())


def test_modes_share_trunk_at_equal_seed():
    sem = build_models(tiny_config("semantic", num_classes=5), seed=11)
    rgb = build_models(tiny_config("rgb", num_classes=5), seed=11)
    sem_params, rgb_params = sem.named_parameters(), rgb.named_parameters()
    head_keys = {
        k
        for k in sem_params
        if k.startswith(f"gen.{GENERATOR_HEAD_PREFIX}") or k.startswith(f"disc.{DISCRIMINATOR_HEAD_PREFIX}")
    }
    for k in sem_params:
        if k in head_keys:
            continue
        assert torch.equal(sem_params[k], rgb_params[k]), f"trunk parameter {k} differs across modes"
    assert not torch.equal(sem_params["gen.head.weight"], torch.zeros_like(sem_params["gen.head.weight"]))
    assert sem_params["gen.head.weight"].shape != rgb_params["gen.head.weight"].shape


def test_generator_simplex_invariant():
    st = build_models(tiny_config(), seed=3)
    z = sample_latent(5, 8, np.random.default_rng(0))
    out = generator_forward(st, z)
    for vol in out:
        validate_prob_volume(vol)
    labels = np.stack([collapse(v) for v in out])
    assert labels.max() < 4


def test_softmax_head_values():
    # the class-channel activation on known logits
    probs = torch.softmax(torch.tensor([0.0, 0.0, 0.0, 0.0]), dim=-1)
    assert torch.allclose(probs, torch.full((4,), 0.25))
    probs = torch.softmax(torch.tensor([2.0, 0.0, 0.0, 0.0], dtype=torch.float64), dim=-1)
    e2 = math.exp(2.0)
    expect = torch.tensor([e2, 1.0, 1.0, 1.0], dtype=torch.float64) / (e2 + 3.0)
    assert torch.allclose(probs, expect, atol=1e-12)
    assert abs(probs[0].item() - 0.7112346) < 1e-6


def test_discriminator_contract():
    st = build_models(tiny_config(), seed=4)
    x = make_real(st, 6)
    probs, feats = discriminator_forward(st, x)
    assert probs.shape == (6,)
    assert ((probs > 0) & (probs < 1)).all()
    probs2, feats2 = discriminator_forward(st, x)
    assert np.array_equal(probs, probs2) and np.array_equal(feats, feats2)


def test_discriminator_shape_errors():
    st = build_models(tiny_config(), seed=4)
    with pytest.raises(ShapeError):
        discriminator_forward(st, np.zeros((2, 8, 8, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        generator_forward(st, np.zeros((2, 9), dtype=np.float32))


def test_d_loss_values():
    eps = 1e-7
    near_perfect = float(d_loss(torch.tensor([1.0 - eps]), torch.tensor([eps])))
    assert abs(near_perfect) < 1e-6
    coin = float(d_loss(torch.tensor([0.5]), torch.tensor([0.5])))
    assert abs(coin - 2 * math.log(2)) < 1e-6
    # mean over a batch equals mean of per-item losses
    r = torch.tensor([0.9, 0.6, 0.7])
    f = torch.tensor([0.2, 0.4, 0.1])
    per_item = [float(d_loss(r[i : i + 1], f[i : i + 1])) for i in range(3)]
    assert abs(float(d_loss(r, f)) - np.mean(per_item)) < 1e-6
    assert float(d_loss(torch.tensor([0.0]), torch.tensor([1.0]))) >= 0


def test_feature_matching_loss_values():
    f = torch.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert float(feature_matching_loss(f, f.clone())) == 0.0
    a = torch.zeros((4, 2))
    b = torch.ones((2, 2))
    assert float(feature_matching_loss(a, b)) == 2.0
    with pytest.raises(ShapeError):
        feature_matching_loss(torch.zeros((2, 3)), torch.zeros((2, 4)))


def test_feature_matching_loss_matches_oracle():
    gen = np.random.default_rng(5)
    fr = gen.standard_normal((6, 9))
    ff = gen.standard_normal((4, 9))
    expect = float(((fr.mean(0) - ff.mean(0)) ** 2).sum())
    got = float(feature_matching_loss(torch.tensor(fr), torch.tensor(ff)))
    assert abs(got - expect) < 1e-12


def test_sample_latent_contract():
    gen = np.random.default_rng(11)
    z = sample_latent(4, 16, gen)
    assert z.shape == (4, 16) and np.isfinite(z).all()
    z1 = sample_latent(3, 5, np.random.default_rng(42))
    z2 = sample_latent(3, 5, np.random.default_rng(42))
    assert np.array_equal(z1, z2)
    big = sample_latent(100_000, 1, np.random.default_rng(1))
    assert abs(big.mean()) < 0.02 and abs(big.var() - 1.0) < 0.02


def test_train_step_zero_lr_keeps_params():
    st = build_models(tiny_config(), seed=5)
    tc = TrainConfig(lr=0.0, batch_size=4, total_steps=1, seed=1)
    before = {k: v.clone() for k, v in st.named_parameters().items()}
    real = make_real(st, 4)
    z = sample_latent(4, 8, np.random.default_rng(2))
    train_step(st, real, z, tc)
    for k, v in st.named_parameters().items():
        assert torch.equal(before[k], v)
    assert any(float(m.abs().sum()) > 0 for m in st.adam_m.values())
    assert st.step == 1


def test_train_step_updates_params_and_is_deterministic():
    results = []
    for _ in range(2):
        st = build_models(tiny_config(), seed=6)
        tc = TrainConfig(lr=1e-3, batch_size=4, total_steps=2, seed=2)
        real = make_real(st, 8)
        z = sample_latent(4, 8, np.random.default_rng(3))
        losses = [train_step(st, real[:4], z, tc), train_step(st, real[4:], z, tc)]
        results.append((losses, {k: v.detach().clone() for k, v in st.named_parameters().items()}))
    assert results[0][0] == results[1][0]
    for k in results[0][1]:
        assert torch.equal(results[0][1][k], results[1][1][k])
    # and training actually moved something
    fresh = build_models(tiny_config(), seed=6).named_parameters()
    assert any(not torch.equal(results[0][1][k], fresh[k]) for k in fresh)


def test_train_step_batch_size_mismatch():
    st = build_models(tiny_config(), seed=5)
    tc = TrainConfig(lr=1e-3, batch_size=8, total_steps=1, seed=1)
    with pytest.raises(ShapeError):
        train_step(st, make_real(st, 4), sample_latent(4, 8, np.random.default_rng(0)), tc)


def test_train_step_divergence_error():
    st = build_models(tiny_config(), seed=5)
    with torch.no_grad():
        st.generator.fc.weight.fill_(float("nan"))
    tc = TrainConfig(lr=1e-3, batch_size=4, total_steps=1, seed=1)
    with pytest.raises(TrainingDivergedError) as err:
        train_step(st, make_real(st, 4), sample_latent(4, 8, np.random.default_rng(0)), tc)
    assert err.value.step == 1


def test_gradients_match_finite_differences():
    torch.manual_seed(0)
    cfg = ModelConfig(mode="semantic", image_size=8, num_classes=3, latent_dim=6, kernel_size=3, base_channels=4)
    st = build_models(cfg, seed=20, dtype=torch.float64)
    gen_net, disc = st.generator, st.discriminator
    gen_net.train()
    disc.train()
    rng = np.random.default_rng(7)
    real = torch.tensor(rng.random((4, 3, 8, 8)))
    real = real / real.sum(1, keepdim=True)
    z = torch.tensor(rng.standard_normal((4, 6)))

    def dl():
        with torch.no_grad():
            fake = gen_net(z)
        pr, _ = disc(real)
        pf, _ = disc(fake)
        return d_loss(pr, pf)

    def gl():
        with torch.no_grad():
            _, fr = disc(real, 0)
        _, ff = disc(gen_net(z), 0)
        return feature_matching_loss(fr, ff)

    for fn, module in ((dl, disc), (gl, gen_net)):
        params = list(module.parameters())
        grads = torch.autograd.grad(fn(), params)
        pick = np.random.default_rng(3)
        h = 1e-4
        checked = 0
        for p, g in zip(params, grads):
            flat = p.data.view(-1)
            for idx in pick.choice(flat.numel(), size=min(6, flat.numel()), replace=False):
                orig = flat[idx].item()
                flat[idx] = orig + h
                with torch.no_grad():
                    lp = float(fn())
                flat[idx] = orig - h
                with torch.no_grad():
                    lm = float(fn())
                flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                ad = float(g.view(-1)[idx])
                assert abs(fd - ad) <= 1e-3 * max(abs(fd), abs(ad), 1e-8)
                checked += 1
        assert checked >= 15


def test_checkpoint_roundtrip(tmp_path):
    st = build_models(tiny_config(), seed=9)
    tc = TrainConfig(lr=1e-3, batch_size=4, total_steps=1, seed=4)
    train_step(st, make_real(st, 4), sample_latent(4, 8, np.random.default_rng(1)), tc)
    path = tmp_path / "state.npz"
    save_checkpoint(st, path)
    loaded = load_checkpoint(path)
    assert loaded.step == st.step
    assert loaded.config == st.config
    for k, v in st.named_parameters().items():
        assert torch.equal(loaded.named_parameters()[k], v)
    for k in st.adam_m:
        assert torch.equal(loaded.adam_m[k], st.adam_m[k])
        assert torch.equal(loaded.adam_v[k], st.adam_v[k])
    z = sample_latent(3, 8, np.random.default_rng(5))
    assert np.array_equal(generator_forward(st, z), generator_forward(loaded, z))


def test_checkpoint_shape_mismatch(tmp_path):
    st = build_models(tiny_config(), seed=9)
    path = tmp_path / "state.npz"
    save_checkpoint(st, path)
    # tamper with the declared latent dim: stored tensors no longer match
    with np.load(path) as data:
        payload = {k: data[k] for k in data.files}
    manifest = json.loads(str(payload["manifest"]))
    manifest["latent_dim"] = 32
    payload["manifest"] = json.dumps(manifest)
    with open(path, "wb") as fh:
        np.savez(fh, **payload)
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(path)


def test_checkpoint_corrupt_and_version(tmp_path):
    path = tmp_path / "junk.npz"
    path.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)

    st = build_models(tiny_config(), seed=9)
    good = tmp_path / "good.npz"
    save_checkpoint(st, good)
    with np.load(good) as data:
        payload = {k: data[k] for k in data.files}
    manifest = json.loads(str(payload["manifest"]))
    manifest["format_version"] = 99
    payload["manifest"] = json.dumps(manifest)
    with open(good, "wb") as fh:
        np.savez(fh, **payload)
    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(good)


def test_checkpoint_is_named_tensor_container(tmp_path):
    st = build_models(tiny_config(), seed=9)
    path = tmp_path / "state.npz"
    save_checkpoint(st, path)
    with zipfile.ZipFile(path) as zf:
        names = zf.namelist()
    assert "manifest.npy" in names
    assert any(n.startswith("param/gen.") for n in names)
    assert any(n.startswith("adam_m/disc.") for n in names)


def test_training_run_writes_log_and_checkpoints(tmp_path):
    st = build_models(tiny_config(), seed=10)
    tc = TrainConfig(lr=1e-3, batch_size=4, total_steps=10, seed=6)
    real = make_real(st, 12)
    ckpts = training_run(
        st,
        real,
        tc,
        run_tag="semantic",
        log_path=tmp_path / "log.csv",
        checkpoint_dir=tmp_path / "ck",
        checkpoint_every=5,
    )
    assert [p.name for p in ckpts] == ["checkpoint_0000005.npz", "checkpoint_0000010.npz"]
    rows = (tmp_path / "log.csv").read_text().strip().splitlines()
    assert rows[0] == "step,d_loss,g_loss,wall_time_s"
    assert len(rows) == 11
    assert load_checkpoint(ckpts[-1]).step == 10


def test_training_run_loss_columns_reproducible(tmp_path):
    logs = []
    for i in range(2):
        st = build_models(tiny_config(), seed=10)
        tc = TrainConfig(lr=1e-3, batch_size=4, total_steps=6, seed=6)
        training_run(st, make_real(st, 12), tc, run_tag="semantic", log_path=tmp_path / f"log{i}.csv")
        rows = (tmp_path / f"log{i}.csv").read_text().strip().splitlines()[1:]
        logs.append([r.rsplit(",", 1)[0] for r in rows])  # drop wall_time_s
    assert logs[0] == logs[1]
