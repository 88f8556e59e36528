"""Differentiable 3D max filtering head module, forward and reverse mode.

Per level the module computes::

    h       = groupnorm(conv3x3(x))            # C -> C channels
    m       = max_filter_3d(h)                  # across the pyramid
    refined = sigmoid(conv3x3(x + m))           # C -> 1 channel
    out     = sigmoid(logits) * refined         # broadcast over classes

Everything is plain numpy in float64 so the gradients can be checked
against finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence

import numpy as np

from .pyramid import (FeaturePyramid, FilterParams, max_filter_3d_backward,
                      max_filter_3d_with_argmax)

GN_EPS = 1e-5


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def default_groups(channels: int, preferred: int = 32) -> int:
    """Largest divisor of ``channels`` not exceeding ``preferred``."""
    for g in range(min(preferred, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


@dataclass
class DmfWeights:
    conv1_w: np.ndarray   # (C, C, 3, 3)
    conv1_b: np.ndarray   # (C,)
    gn_gamma: np.ndarray  # (C,)
    gn_beta: np.ndarray   # (C,)
    conv2_w: np.ndarray   # (1, C, 3, 3)
    conv2_b: np.ndarray   # (1,)
    groups: int = 32
    filter: FilterParams = field(default_factory=FilterParams)

    def __post_init__(self):
        for f in self.array_fields():
            setattr(self, f, np.asarray(getattr(self, f), dtype=np.float64))
        c = self.conv1_w.shape[0]
        expected = {"conv1_w": (c, c, 3, 3), "conv1_b": (c,), "gn_gamma": (c,), "gn_beta": (c,),
                    "conv2_w": (1, c, 3, 3), "conv2_b": (1,)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if c % self.groups:
            raise ValueError(f"{c} channels not divisible into {self.groups} groups")

    @staticmethod
    def array_fields() -> List[str]:
        return [f.name for f in fields(DmfWeights) if f.name not in ("groups", "filter")]

    @property
    def channels(self) -> int:
        return self.conv1_w.shape[0]

    @classmethod
    def zeros(cls, channels: int, groups: Optional[int] = None,
              filter: FilterParams = FilterParams()) -> "DmfWeights":
        return cls(np.zeros((channels, channels, 3, 3)), np.zeros(channels), np.ones(channels),
                   np.zeros(channels), np.zeros((1, channels, 3, 3)), np.zeros(1),
                   groups or default_groups(channels), filter)

    @classmethod
    def random(cls, channels: int, seed: int = 0, groups: Optional[int] = None,
               filter: FilterParams = FilterParams(), scale: float = 0.3) -> "DmfWeights":
        rng = np.random.default_rng(seed)
        return cls(rng.normal(0, scale, (channels, channels, 3, 3)),
                   rng.normal(0, scale, channels),
                   1.0 + rng.normal(0, 0.1, channels),
                   rng.normal(0, 0.1, channels),
                   rng.normal(0, scale, (1, channels, 3, 3)),
                   rng.normal(0, scale, 1),
                   groups or default_groups(channels), filter)

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.array_fields()}

    def replace(self, **arrays) -> "DmfWeights":
        kw = self.as_dict()
        kw.update(arrays)
        return DmfWeights(groups=self.groups, filter=self.filter, **kw)


# ---------------------------------------------------------------------------
# primitive layers

def _im2col(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C*9, H*W) for a 3x3 same-padded convolution."""
    c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    cols = np.empty((c, 3, 3, h, w))
    for dy in range(3):
        for dx in range(3):
            cols[:, dy, dx] = xp[:, dy:dy + h, dx:dx + w]
    return cols.reshape(c * 9, h * w)


def _col2im(cols: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    cols = cols.reshape(c, 3, 3, h, w)
    xp = np.zeros((c, h + 2, w + 2))
    for dy in range(3):
        for dx in range(3):
            xp[:, dy:dy + h, dx:dx + w] += cols[:, dy, dx]
    return xp[:, 1:-1, 1:-1]


def conv3x3(x, weight, bias):
    _, h, w = x.shape
    cols = _im2col(x)
    out = weight.reshape(weight.shape[0], -1) @ cols + bias[:, None]
    return out.reshape(-1, h, w), cols


def conv3x3_backward(grad, x_shape, cols, weight):
    o = weight.shape[0]
    g = grad.reshape(o, -1)
    dw = (g @ cols.T).reshape(weight.shape)
    db = g.sum(axis=1)
    dcols = weight.reshape(o, -1).T @ g
    return _col2im(dcols, *x_shape), dw, db


def group_norm(x, gamma, beta, groups):
    c, h, w = x.shape
    xg = x.reshape(groups, -1)
    mean = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + GN_EPS)
    xhat = ((xg - mean) * inv).reshape(c, h, w)
    return gamma[:, None, None] * xhat + beta[:, None, None], (xhat, inv)


def group_norm_backward(grad, cache, gamma, groups):
    xhat, inv = cache
    c = xhat.shape[0]
    dgamma = (grad * xhat).sum(axis=(1, 2))
    dbeta = grad.sum(axis=(1, 2))
    dxhat = (grad * gamma[:, None, None]).reshape(groups, -1)
    xh = xhat.reshape(groups, -1)
    n = xh.shape[1]
    dx = inv / n * (n * dxhat - dxhat.sum(axis=1, keepdims=True)
                    - xh * (dxhat * xh).sum(axis=1, keepdims=True))
    return dx.reshape(xhat.shape), dgamma, dbeta


# ---------------------------------------------------------------------------
# module

@dataclass
class DmfCache:
    features: FeaturePyramid
    logits: FeaturePyramid
    conv1_cols: List[np.ndarray]
    gn_cache: list
    hidden: FeaturePyramid
    argmax: list
    conv2_cols: List[np.ndarray]
    refined: List[np.ndarray]
    coarse: List[np.ndarray]


@dataclass
class DmfGradients:
    features: List[np.ndarray]
    logits: List[np.ndarray]
    weights: Dict[str, np.ndarray]


def _check(features: FeaturePyramid, logits: FeaturePyramid, weights: DmfWeights):
    if features.channels != weights.channels:
        raise ValueError(f"weights expect {weights.channels} channels, "
                         f"features have {features.channels}")
    if len(logits) != len(features):
        raise ValueError("logits and features differ in level count")
    for s, (x, z) in enumerate(zip(features.levels, logits.levels)):
        if x.shape[1:] != z.shape[1:]:
            raise ValueError(f"level {s}: logits grid {z.shape[1:]} != feature grid {x.shape[1:]}")


def dmf_forward(features: FeaturePyramid, logits: FeaturePyramid, weights: DmfWeights,
                return_cache: bool = False):
    """Refine per-class logits with the 3D max filtering module.

    Parameters
    ----------
    features : FeaturePyramid
        Head features, C channels per level.
    logits : FeaturePyramid
        Coarse per-class logits, K channels on the same grids.
    weights : DmfWeights
        Module parameters; ``weights.filter`` gives the tube size.

    Returns
    -------
    FeaturePyramid of refined scores (K channels), and the forward cache when
    ``return_cache`` is set.
    """
    _check(features, logits, weights)
    cols1, gn_cache, hidden = [], [], []
    for x in features.levels:
        a, cols = conv3x3(x, weights.conv1_w, weights.conv1_b)
        h, cache = group_norm(a, weights.gn_gamma, weights.gn_beta, weights.groups)
        cols1.append(cols)
        gn_cache.append(cache)
        hidden.append(h)
    hidden = FeaturePyramid(hidden, features.strides)
    maxed, argmax = max_filter_3d_with_argmax(hidden, weights.filter)
    out, cols2, refined, coarse = [], [], [], []
    for x, m, z in zip(features.levels, maxed.levels, logits.levels):
        u, cols = conv3x3(x + m, weights.conv2_w, weights.conv2_b)
        r = sigmoid(u)
        p = sigmoid(z)
        out.append(p * r)
        cols2.append(cols)
        refined.append(r)
        coarse.append(p)
    result = FeaturePyramid(out, features.strides)
    if return_cache:
        return result, DmfCache(features, logits, cols1, gn_cache, hidden, argmax, cols2,
                                refined, coarse)
    return result


def dmf_backward(features: FeaturePyramid, logits: FeaturePyramid, weights: DmfWeights,
                 upstream: Sequence[np.ndarray], cache: Optional[DmfCache] = None) -> DmfGradients:
    """Exact reverse-mode gradients of :func:`dmf_forward`.

    Max ties route the gradient to the first maximum in scan order.
    """
    if cache is None:
        _, cache = dmf_forward(features, logits, weights, return_cache=True)
    if len(upstream) != len(features):
        raise ValueError("upstream gradient has wrong level count")
    gw = {name: np.zeros_like(v) for name, v in weights.as_dict().items()}
    dx_levels, dz_levels, dm_levels = [], [], []
    for s, g in enumerate(upstream):
        g = np.asarray(g, dtype=np.float64)
        r, p = cache.refined[s], cache.coarse[s]
        if g.shape != p.shape:
            raise ValueError(f"level {s}: upstream gradient {g.shape} != output {p.shape}")
        dz_levels.append(g * r * p * (1.0 - p))
        du = (g * p).sum(axis=0, keepdims=True) * r * (1.0 - r)
        dsum, dw2, db2 = conv3x3_backward(du, features.levels[s].shape, cache.conv2_cols[s],
                                          weights.conv2_w)
        gw["conv2_w"] += dw2
        gw["conv2_b"] += db2
        dx_levels.append(dsum.copy())
        dm_levels.append(dsum)
    dh_levels = max_filter_3d_backward(cache.hidden, weights.filter, cache.argmax, dm_levels)
    for s, dh in enumerate(dh_levels):
        da, dgamma, dbeta = group_norm_backward(dh, cache.gn_cache[s], weights.gn_gamma,
                                                weights.groups)
        gw["gn_gamma"] += dgamma
        gw["gn_beta"] += dbeta
        dx, dw1, db1 = conv3x3_backward(da, features.levels[s].shape, cache.conv1_cols[s],
                                        weights.conv1_w)
        gw["conv1_w"] += dw1
        gw["conv1_b"] += db1
        dx_levels[s] += dx
    return DmfGradients(dx_levels, dz_levels, gw)
