"""Encoders, intra-/cross-modal attention, and soft-gated fusion.

The attention sequence axis is the set of posts inside one window
(``scope="window"``); a degenerate per-post mode (``scope="post"``, every
query attends only to itself) exists for ablation. Scaled dot-product uses
sqrt(head width) by default (``scale="head"``) or sqrt(model width)
(``scale="model"``).

No residual connections or layer normalization anywhere: the network is
shallow and gate/LSTM based, and stays stable without them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, softmax
from .data import Dataset
from .params import AttentionBlock, ModelParams
from .windows import Window

SCOPES = ("window", "post")
SCALES = ("head", "model")


class FusionError(ValueError):
    pass


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-wise affine map x @ w.T + b."""
    out = x @ w.transpose((1, 0))
    return out if b is None else out + b


def encode(ds: Dataset, params: ModelParams, indices) -> tuple[Tensor, Tensor]:
    """Project raw text/image embeddings of ``indices`` to model width.

    Zero image vectors (absent images) map exactly onto the image bias.
    """
    idx = list(indices)
    text = ds.text[idx]
    image = ds.image[idx]
    if text.shape[1] != params.d_text:
        raise FusionError(
            f"dataset d_text={text.shape[1]} but fusion.W_text expects {params.d_text}"
        )
    if image.shape[1] != params.d_img:
        raise FusionError(
            f"dataset d_img={image.shape[1]} but fusion.W_img expects {params.d_img}"
        )
    t = linear(Tensor(text), params["fusion.W_text"], params["fusion.b_text"])
    i = linear(Tensor(image), params["fusion.W_img"], params["fusion.b_img"])
    return t, i


def _merge_heads(x: Tensor) -> Tensor:
    # (H, n, dh) -> (n, H*dh)
    h, n, dh = x.shape
    return x.transpose((1, 0, 2)).reshape((n, h * dh))


def mh_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    block: AttentionBlock,
    scale: str = "head",
    return_weights: bool = False,
):
    """Multi-head scaled dot-product attention, rows of q attending to rows of k/v."""
    if k.shape[0] < 1:
        raise FusionError("attention requires at least one key row")
    if scale not in SCALES:
        raise FusionError(f"unknown attention scale {scale!r}")
    d = q.shape[1]
    heads = block.heads
    divisor = np.sqrt(d / heads) if scale == "head" else np.sqrt(d)

    qh = q @ block.wq              # (H, n_q, dh)
    kh = k @ block.wk              # (H, n_k, dh)
    vh = v @ block.wv              # (H, n_k, dh)
    scores = (qh @ kh.transpose((0, 2, 1))) * (1.0 / divisor)
    weights = softmax(scores)      # (H, n_q, n_k), rows sum to 1
    out = _merge_heads(weights @ vh) @ block.wo
    if return_weights:
        return out, weights
    return out


def _self_attend(x: Tensor, block: AttentionBlock, scope: str, scale: str) -> Tensor:
    if scope == "window":
        attended = mh_attention(x, x, x, block, scale)
    elif scope == "post":
        # Each post attends only to itself: the singleton softmax is 1, so
        # the result is just the value path.
        attended = _merge_heads(x @ block.wv) @ block.wo
    else:
        raise FusionError(f"unknown attention scope {scope!r}")
    return linear(attended, block.w_out, block.b_out)


def _cross_attend(q: Tensor, kv: Tensor, block: AttentionBlock, scope: str,
                  scale: str) -> Tensor:
    if scope == "window":
        attended = mh_attention(q, kv, kv, block, scale)
    else:
        attended = _merge_heads(kv @ block.wv) @ block.wo
    return linear(attended, block.w_out, block.b_out)


@dataclass(frozen=True)
class FusedPost:
    """Per-(window, post) fusion record, all vectors of model width."""

    window_index: int
    post_index: int
    encoded_text: np.ndarray
    encoded_image: np.ndarray
    cross_ti: np.ndarray
    cross_it: np.ndarray
    gate: np.ndarray
    fused: np.ndarray


@dataclass
class WindowFusion:
    """Graph nodes for one fused window; rows follow ``window.members``."""

    window: Window
    enc_text: Tensor
    enc_image: Tensor
    cross_ti: Tensor
    cross_it: Tensor
    gate: Tensor      # sigmoid-activated, in (0, 1)
    fused: Tensor     # (n, d)

    def fused_posts(self) -> list[FusedPost]:
        return [
            FusedPost(
                window_index=self.window.index,
                post_index=p,
                encoded_text=self.enc_text.data[r],
                encoded_image=self.enc_image.data[r],
                cross_ti=self.cross_ti.data[r],
                cross_it=self.cross_it.data[r],
                gate=self.gate.data[r],
                fused=self.fused.data[r],
            )
            for r, p in enumerate(self.window.members)
        ]


def fuse_window(
    ds: Dataset,
    params: ModelParams,
    window: Window,
    scope: str = "window",
    scale: str = "head",
) -> WindowFusion:
    """Full fusion pipeline for one window's posts."""
    if not window.members:
        raise FusionError(f"window {window.index} has no members")
    if scope not in SCOPES:
        raise FusionError(f"unknown attention scope {scope!r}")

    t, i = encode(ds, params, window.members)
    h_text = _self_attend(t, params.block("att_text"), scope, scale)
    h_img = _self_attend(i, params.block("att_img"), scope, scale)
    c_ti = _cross_attend(h_text, h_img, params.block("att_ti"), scope, scale)
    c_it = _cross_attend(h_img, h_text, params.block("att_it"), scope, scale)

    gate_pre = linear(concat([c_ti, c_it], axis=1), params["fusion.W_g"],
                      params["fusion.b_g"])
    gate = gate_pre.sigmoid()
    fused = gate * c_ti + (1.0 - gate) * c_it
    return WindowFusion(window, t, i, c_ti, c_it, gate, fused)
