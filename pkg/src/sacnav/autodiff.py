"""Tensor operations, layers, Adam and checkpoints for the SAC networks.

Reverse-mode differentiation is delegated to torch autograd; this module
pins down the small op set the networks use, validates shapes, owns the
optimizer arithmetic and the checkpoint layout, and carries an independent
central-difference gradient checker.

Checkpoint layout
-----------------
``<stem>.json``  ``{"format": "sacnav-ckpt-1", "dtype": "<f4", "tensors":
[{"name", "shape", "offset"}], "extra": {...}}`` where ``offset`` is the
byte offset into the blob.
``<stem>.bin``   the tensors' little-endian float32 values, C order,
concatenated in manifest order.
"""

from __future__ import annotations

import contextlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

Tensor = torch.Tensor

_DTYPE = torch.float32


class ShapeError(ValueError):
    pass


def default_dtype() -> torch.dtype:
    return _DTYPE


@contextlib.contextmanager
def precision(bits: int):
    """Temporarily switch tensors created here (and torch defaults) to 32 or 64 bit."""
    global _DTYPE
    new = {32: torch.float32, 64: torch.float64}[bits]
    old, old_torch = _DTYPE, torch.get_default_dtype()
    _DTYPE = new
    torch.set_default_dtype(new)
    try:
        yield
    finally:
        _DTYPE = old
        torch.set_default_dtype(old_torch)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return torch.tensor(np.asarray(data), dtype=_DTYPE, requires_grad=requires_grad)


def _require(cond: bool, msg: str, *shapes):
    if not cond:
        raise ShapeError(msg + ": " + " vs ".join(str(tuple(s)) for s in shapes))


# --------------------------------------------------------------------------
# forward ops


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Valid-padding 2-D convolution. x: (N, C, H, W); weight: (O, C, kh, kw)."""
    _require(x.dim() == 4 and weight.dim() == 4, "conv2d expects 4-D input and weight",
             x.shape, weight.shape)
    _require(x.shape[1] == weight.shape[1], "conv2d channel mismatch", x.shape, weight.shape)
    _require(x.shape[2] >= weight.shape[2] and x.shape[3] >= weight.shape[3],
             "conv2d kernel larger than input", x.shape, weight.shape)
    if bias is not None:
        _require(bias.shape == (weight.shape[0],), "conv2d bias mismatch", bias.shape, weight.shape)
    return F.conv2d(x, weight, bias, stride=stride)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x @ weight.T + bias; weight: (out, in)."""
    _require(x.shape[-1] == weight.shape[1], "linear input mismatch", x.shape, weight.shape)
    if bias is not None:
        _require(bias.shape == (weight.shape[0],), "linear bias mismatch", bias.shape, weight.shape)
    return F.linear(x, weight, bias)


def layer_norm(x: Tensor, scale: Optional[Tensor] = None, shift: Optional[Tensor] = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last (feature) axis, then apply the learned affine map."""
    n = x.shape[-1]
    for p in (scale, shift):
        if p is not None:
            _require(p.shape == (n,), "layer_norm parameter mismatch", x.shape, p.shape)
    return F.layer_norm(x, (n,), scale, shift, eps)


def relu(x: Tensor) -> Tensor:
    return torch.relu(x)


def tanh(x: Tensor) -> Tensor:
    return torch.tanh(x)


def exp(x: Tensor) -> Tensor:
    return torch.exp(x)


def log(x: Tensor) -> Tensor:
    return torch.log(x)


def sum(x: Tensor, dim=None, keepdim: bool = False) -> Tensor:  # noqa: A001
    return x.sum() if dim is None else x.sum(dim, keepdim=keepdim)


def mean(x: Tensor, dim=None, keepdim: bool = False) -> Tensor:
    return x.mean() if dim is None else x.mean(dim, keepdim=keepdim)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    _require(a.shape == b.shape, "minimum shape mismatch", a.shape, b.shape)
    return torch.minimum(a, b)


def reparam_gaussian_sample(mu: Tensor, log_std: Tensor, noise: Tensor) -> Tensor:
    """mu + exp(log_std) * noise, differentiable in mu and log_std."""
    _require(mu.shape == log_std.shape == noise.shape, "reparam shapes differ",
             mu.shape, log_std.shape, noise.shape)
    return mu + torch.exp(log_std) * noise


def detach(t: Tensor) -> Tensor:
    """Same values, cut from the graph."""
    return t.detach()


# --------------------------------------------------------------------------
# layers


class Linear(nn.Module):
    def __init__(self, n_in: int, n_out: int, gain: float = 1.0):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_out, n_in, dtype=_DTYPE))
        self.bias = nn.Parameter(torch.zeros(n_out, dtype=_DTYPE))
        nn.init.orthogonal_(self.weight, gain)

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(nn.Module):
    def __init__(self, c_in: int, c_out: int, kernel: int = 3, stride: int = 1, gain: float = math.sqrt(2)):
        super().__init__()
        self.stride = stride
        self.weight = nn.Parameter(torch.empty(c_out, c_in, kernel, kernel, dtype=_DTYPE))
        self.bias = nn.Parameter(torch.zeros(c_out, dtype=_DTYPE))
        nn.init.orthogonal_(self.weight, gain)

    def forward(self, x):
        return conv2d(x, self.weight, self.bias, self.stride)


class LayerNorm(nn.Module):
    def __init__(self, n: int):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(n, dtype=_DTYPE))
        self.shift = nn.Parameter(torch.zeros(n, dtype=_DTYPE))

    def forward(self, x):
        return layer_norm(x, self.scale, self.shift)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[Tensor], **kw) -> "AdamState":
        return cls([torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params], **kw)


@torch.no_grad()
def adam_step(params: Sequence[Tensor], grads: Sequence[Optional[Tensor]], state: AdamState) -> None:
    """Bias-corrected Adam update, in place. ``None`` gradients count as zero."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = torch.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {tuple(g.shape)} vs parameter {tuple(p.shape)}")
        m.mul_(b1).add_(g, alpha=1.0 - b1)
        v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
        p.sub_(state.lr * (m / c1) / ((v / c2).sqrt() + state.eps))


class Adam:
    """Optimizer wrapper around :func:`adam_step` using ``p.grad``."""

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = AdamState.zeros_like(self.params, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)


# --------------------------------------------------------------------------
# checkpoints

CKPT_FORMAT = "sacnav-ckpt-1"


def save_checkpoint(tensors: dict, stem, extra: Optional[dict] = None) -> tuple:
    """Write ``stem.json`` + ``stem.bin``; returns both paths."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    entries, blobs, offset = [], [], 0
    for name, t in tensors.items():
        a = np.asarray(t.detach().cpu().numpy(), dtype="<f4", order="C")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    manifest = {"format": CKPT_FORMAT, "dtype": "<f4", "tensors": entries, "extra": extra or {}}
    jpath, bpath = stem.with_suffix(".json"), stem.with_suffix(".bin")
    jpath.write_text(json.dumps(manifest, indent=1, sort_keys=True))
    bpath.write_bytes(b"".join(blobs))
    return jpath, bpath


def load_checkpoint(stem) -> tuple:
    """Return (ordered dict of float32 tensors, extra)."""
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    manifest = json.loads(stem.with_suffix(".json").read_text())
    if manifest.get("format") != CKPT_FORMAT:
        raise ValueError(f"unknown checkpoint format {manifest.get('format')!r}")
    blob = stem.with_suffix(".bin").read_bytes()
    out = {}
    for e in manifest["tensors"]:
        n = int(np.prod(e["shape"])) if e["shape"] else 1
        a = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"]).reshape(tuple(e["shape"]))
        out[e["name"]] = torch.from_numpy(a.copy())
    return out, manifest.get("extra", {})


# --------------------------------------------------------------------------
# finite-difference gradient checking


def numerical_grad(f: Callable[[], Tensor], param: Tensor, eps: float = 1e-5,
                   indices: Optional[Sequence[int]] = None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. entries of ``param`` (flat indices)."""
    flat = param.data.view(-1)
    idx = range(flat.numel()) if indices is None else indices
    out = np.zeros(len(idx))
    with torch.no_grad():
        for k, i in enumerate(idx):
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = f().item()
            flat[i] = orig - eps
            fm = f().item()
            flat[i] = orig
            out[k] = (fp - fm) / (2.0 * eps)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|); 0 when both vanish."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def gradcheck(f: Callable[[], Tensor], params: Sequence[Tensor], eps: float = 1e-5,
              max_entries: Optional[int] = None, seed: int = 0) -> float:
    """Largest per-tensor relative error between autograd and central differences.

    ``max_entries`` subsamples each tensor's entries (seeded) to bound cost.
    """
    for p in params:
        p.grad = None
    loss = f()
    if loss.numel() != 1:
        raise ShapeError(f"gradcheck needs a scalar loss, got shape {tuple(loss.shape)}")
    grads = torch.autograd.grad(loss, list(params), allow_unused=True)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(params, grads):
        n = p.numel()
        idx = np.arange(n) if max_entries is None or n <= max_entries else np.sort(
            rng.choice(n, max_entries, replace=False))
        analytic = np.zeros(len(idx)) if g is None else g.detach().reshape(-1)[idx].cpu().numpy()
        numeric = numerical_grad(f, p, eps, idx.tolist())
        worst = max(worst, relative_error(analytic, numeric))
    return worst
