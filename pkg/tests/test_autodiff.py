import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from sacnav import autodiff as ad


def np_conv2d(x, w, b, stride):
    """Oracle: explicit loops over output positions."""
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    oh, ow = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = x[:, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
            out[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w) + b
    return out


def np_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


# -- forward ops


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_matches_loop_oracle(stride):
    rng = np.random.default_rng(stride)
    x, w, b = rng.normal(size=(2, 3, 9, 8)), rng.normal(size=(4, 3, 3, 3)), rng.normal(size=4)
    with ad.precision(64):
        got = ad.conv2d(ad.tensor(x), ad.tensor(w), ad.tensor(b), stride).numpy()
    assert np.allclose(got, np_conv2d(x, w, b, stride), atol=1e-12)


def test_linear_and_layer_norm_closed_form():
    rng = np.random.default_rng(0)
    x, w, b = rng.normal(size=(5, 6)), rng.normal(size=(3, 6)), rng.normal(size=3)
    with ad.precision(64):
        assert np.allclose(ad.linear(ad.tensor(x), ad.tensor(w), ad.tensor(b)).numpy(), x @ w.T + b)
        ln = ad.layer_norm(ad.tensor(x)).numpy()
    ref = (x - x.mean(-1, keepdims=True)) / np.sqrt(x.var(-1, keepdims=True) + 1e-5)
    assert np.allclose(ln, ref, atol=1e-12)


def test_reparam_sample():
    with ad.precision(64):
        s = ad.reparam_gaussian_sample(ad.tensor([1.0, -2.0]), ad.tensor([0.0, np.log(3.0)]),
                                       ad.tensor([0.5, 1.0]))
    assert s.numpy() == pytest.approx([1.5, 1.0])


@pytest.mark.parametrize("call", [
    lambda: ad.conv2d(torch.zeros(1, 2, 5, 5), torch.zeros(3, 3, 3, 3)),
    lambda: ad.conv2d(torch.zeros(1, 2, 2, 2), torch.zeros(3, 2, 3, 3)),
    lambda: ad.conv2d(torch.zeros(2, 5, 5), torch.zeros(3, 2, 3, 3)),
    lambda: ad.linear(torch.zeros(4, 5), torch.zeros(3, 6)),
    lambda: ad.linear(torch.zeros(4, 6), torch.zeros(3, 6), torch.zeros(4)),
    lambda: ad.layer_norm(torch.zeros(2, 4), torch.ones(5)),
    lambda: ad.minimum(torch.zeros(3), torch.zeros(4)),
    lambda: ad.reparam_gaussian_sample(torch.zeros(2), torch.zeros(3), torch.zeros(2)),
])
def test_shape_errors(call):
    with pytest.raises(ad.ShapeError):
        call()


def test_detach_cuts_graph():
    x = torch.ones(3, requires_grad=True)
    y = ad.detach(x * 2)
    assert not y.requires_grad and torch.equal(y, torch.full((3,), 2.0))


def test_precision_context_restores():
    before = torch.get_default_dtype()
    with ad.precision(64):
        assert ad.tensor([1.0]).dtype == torch.float64
        assert ad.Linear(3, 2).weight.dtype == torch.float64
    assert ad.tensor([1.0]).dtype == torch.float32
    assert torch.get_default_dtype() == before


# -- gradients


def test_gradcheck_on_known_function():
    with ad.precision(64):
        x = ad.tensor(np.array([0.3, -1.2, 2.0]), requires_grad=True)
        err = ad.gradcheck(lambda: ad.sum(ad.exp(x) * ad.tanh(x)), [x], eps=1e-6)
        assert err < 1e-8
        g = ad.numerical_grad(lambda: ad.sum(x * x), x, 1e-6)
    assert g == pytest.approx(2 * np.array([0.3, -1.2, 2.0]), abs=1e-8)


def test_gradcheck_flags_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x * x

        @staticmethod
        def backward(ctx, g):
            return g  # should be 2x g

    with ad.precision(64):
        x = ad.tensor(np.array([1.0, 2.0]), requires_grad=True)
        assert ad.gradcheck(lambda: Bad.apply(x).sum(), [x], eps=1e-6) > 0.1


def test_gradcheck_rejects_non_scalar():
    x = torch.ones(3, requires_grad=True)
    with pytest.raises(ad.ShapeError):
        ad.gradcheck(lambda: x * 2, [x])


def test_relative_error_definition():
    assert ad.relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert ad.relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.2])) == pytest.approx(0.2 / 2.2)


# -- Adam


def test_adam_matches_closed_form():
    rng = np.random.default_rng(1)
    p0 = rng.normal(size=(3, 4))
    grads = [rng.normal(size=(3, 4)) for _ in range(7)]
    with ad.precision(64):
        p = ad.tensor(p0)
        state = ad.AdamState.zeros_like([p], lr=0.01)
        for g in grads:
            ad.adam_step([p], [ad.tensor(g)], state)
    assert np.allclose(p.numpy(), np_adam(p0, grads, lr=0.01), atol=1e-14)
    assert state.step == 7


@given(st.floats(-10, 10).filter(lambda g: abs(g) > 1e-3))
def test_adam_first_step_moves_by_lr(g):
    p = torch.zeros(1, dtype=torch.float64)
    state = ad.AdamState.zeros_like([p], lr=0.05)
    ad.adam_step([p], [torch.tensor([g], dtype=torch.float64)], state)
    assert p.item() == pytest.approx(-0.05 * np.sign(g), rel=1e-5)


def test_adam_none_gradient_and_shape_check():
    p = torch.ones(2)
    state = ad.AdamState.zeros_like([p])
    ad.adam_step([p], [None], state)
    assert torch.equal(p, torch.ones(2))
    with pytest.raises(ad.ShapeError):
        ad.adam_step([p], [torch.ones(3)], state)


def test_adam_wrapper_uses_grad():
    w = torch.nn.Parameter(torch.tensor([1.0, -1.0]))
    opt = ad.Adam([w], lr=0.1)
    (w ** 2).sum().backward()
    opt.step()
    assert w.detach().numpy() == pytest.approx([0.9, -0.9], abs=1e-6)
    opt.zero_grad()
    assert w.grad is None


# -- checkpoints


def test_checkpoint_roundtrip_and_layout(tmp_path):
    rng = np.random.default_rng(2)
    tensors = {"a.weight": torch.tensor(rng.normal(size=(2, 3)), dtype=torch.float32),
               "b": torch.tensor(rng.normal(size=5), dtype=torch.float32),
               "s": torch.tensor(1.5)}
    jpath, bpath = ad.save_checkpoint(tensors, tmp_path / "ck", {"episode": 3})
    back, extra = ad.load_checkpoint(tmp_path / "ck")
    assert list(back) == list(tensors) and extra == {"episode": 3}
    for k in tensors:
        assert torch.equal(back[k], tensors[k])
    manifest = json.loads(jpath.read_text())
    assert manifest["format"] == "sacnav-ckpt-1"
    assert [e["offset"] for e in manifest["tensors"]] == [0, 24, 44]
    raw = np.frombuffer(bpath.read_bytes(), "<f4")
    assert raw.size == 12 and np.array_equal(raw[6:11], tensors["b"].numpy())
    # loading by the .json path works too
    assert torch.equal(ad.load_checkpoint(jpath)[0]["b"], tensors["b"])


def test_checkpoint_rejects_unknown_format(tmp_path):
    (tmp_path / "x.json").write_text(json.dumps({"format": "other", "tensors": []}))
    (tmp_path / "x.bin").write_bytes(b"")
    with pytest.raises(ValueError):
        ad.load_checkpoint(tmp_path / "x")


def test_checkpoint_bytes_deterministic(tmp_path):
    t = {"w": torch.arange(6, dtype=torch.float32).reshape(2, 3)}
    ad.save_checkpoint(t, tmp_path / "a")
    ad.save_checkpoint(t, tmp_path / "b")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_layers_output_shapes(seed):
    torch.manual_seed(seed)
    x = torch.randn(2, 3, 10, 10)
    assert ad.Conv2d(3, 5, stride=2)(x).shape == (2, 5, 4, 4)
    assert ad.Linear(7, 4)(torch.randn(3, 7)).shape == (3, 4)
    assert ad.LayerNorm(4)(torch.randn(3, 4)).shape == (3, 4)
