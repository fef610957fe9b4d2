import pytest
import torch

from gtsa.model import (ConvBlock, ConvHead, ModelConfig, ema_update, init_model, momentum_at,
                        sincos_2d)


@pytest.fixture(scope="module")
def nets():
    return init_model(ModelConfig(dim=64, depth=2, heads=4, patch=8), seed=0)


def test_init_deterministic():
    a, _ = init_model(ModelConfig(dim=16, depth=1, heads=2), 3)
    b, _ = init_model(ModelConfig(dim=16, depth=1, heads=2), 3)
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and torch.equal(pa, pb)


def test_teacher_is_copy(nets):
    student, teacher = nets
    sp = dict(student.named_parameters())
    names = [n for n, _ in teacher.named_parameters()]
    assert names and all(n.startswith(("encoder.", "projector.")) for n in names)
    for n, p in teacher.named_parameters():
        assert torch.equal(p, sp[n])
        assert not p.requires_grad
    assert teacher.predictor is None and teacher.rot_head is None


def test_init_statistics(nets):
    student, _ = nets
    w = student.encoder.blocks[0].mlp[0].weight
    assert abs(w.std().item() - 0.02) < 0.004
    assert torch.count_nonzero(student.encoder.blocks[0].mlp[0].bias) == 0


def test_bad_dims():
    with pytest.raises(ValueError):
        ModelConfig(dim=10, heads=4)
    student, _ = init_model(ModelConfig(dim=16, depth=1, heads=2), 0)
    with pytest.raises(ValueError):
        student.encode(torch.zeros(1, 3, 60, 60))


@pytest.mark.parametrize("size,grid", [(64, 8), (32, 4)])
def test_encode_shapes(nets, size, grid):
    student, _ = nets
    out = student.encode(torch.rand(2, 3, size, size))
    assert out.shape == (2, 64, grid, grid)


def test_encode_batch_independent(nets):
    student, _ = nets
    x = torch.rand(4, 3, 32, 32)
    perm = torch.tensor([2, 0, 3, 1])
    with torch.no_grad():
        torch.testing.assert_close(student.encode(x)[perm], student.encode(x[perm]), rtol=0, atol=1e-6)


def test_heads_keep_resolution(nets):
    student, _ = nets
    for h in (3, 5, 8):
        x = torch.randn(2, 64, h, h)
        assert student.project(x).shape == x.shape
        assert student.predict(x).shape == x.shape
        assert torch.isfinite(student.predict(student.project(x))).all()


def test_zero_conv_block_is_identity():
    blk = ConvBlock(8)
    with torch.no_grad():
        blk.conv.weight.zero_()
        blk.conv.bias.zero_()
    x = torch.randn(2, 8, 4, 4)
    assert torch.equal(blk(x), x)


def test_head_channel_mismatch():
    with pytest.raises(ValueError):
        ConvHead(8, 2)(torch.zeros(1, 4, 3, 3))


def test_rotation_head(nets):
    student, _ = nets
    v = 0.7
    fmap = torch.full((10, 64, 4, 4), v)
    assert torch.allclose(fmap.mean(dim=(-2, -1)), torch.full((10, 64), v))
    logits = student.rot_logits(fmap)
    assert logits.shape == (10, 4)
    f = torch.randn(1, 64, 4, 4)
    shuffled = f.flatten(2)[..., torch.randperm(16)].reshape(1, 64, 4, 4)
    torch.testing.assert_close(student.rot_logits(f), student.rot_logits(shuffled), rtol=0, atol=1e-6)


def test_sincos_table():
    pe = sincos_2d(3, 5, 8)
    assert pe.shape == (15, 8)
    assert torch.allclose(pe.norm(dim=1), torch.full((15,), 2.0))


class TestEMA:
    def _pair(self):
        return init_model(ModelConfig(dim=8, depth=1, heads=2), 0)

    def test_m1_keeps_teacher(self):
        s, t = self._pair()
        with torch.no_grad():
            for p in s.parameters():
                p.add_(1.0)
        before = {n: p.clone() for n, p in t.named_parameters()}
        ema_update(t, s, 1.0)
        assert all(torch.equal(before[n], p) for n, p in t.named_parameters())

    def test_m0_copies_student(self):
        s, t = self._pair()
        with torch.no_grad():
            for p in s.parameters():
                p.add_(1.0)
        ema_update(t, s, 0.0)
        sp = dict(s.named_parameters())
        assert all(torch.equal(sp[n], p) for n, p in t.named_parameters())

    def test_half(self):
        s, t = self._pair()
        with torch.no_grad():
            for p in t.parameters():
                p.fill_(1.0)
            for p in s.parameters():
                p.fill_(0.0)
        ema_update(t, s, 0.5)
        assert all(torch.all(p == 0.5) for p in t.parameters())

    def test_rejects_bad_momentum(self):
        s, t = self._pair()
        with pytest.raises(ValueError):
            ema_update(t, s, 1.5)


class TestMomentum:
    def test_anchors(self):
        assert momentum_at(0, 100, 0.996) == pytest.approx(0.996, abs=1e-15)
        assert momentum_at(100, 100, 0.996) == 1.0
        assert momentum_at(50, 100, 0.996) == pytest.approx(0.998, abs=1e-15)

    def test_monotone(self):
        ms = [momentum_at(s, 37, 0.996) for s in range(38)]
        assert all(b >= a for a, b in zip(ms, ms[1:]))

    def test_rejects_overrun(self):
        with pytest.raises(ValueError):
            momentum_at(101, 100)
