"""Dense multi-scale multi-head attention over a feature pyramid.

Every query attends to every position of every pyramid level.  For head
``m`` the weight of key ``k`` on level ``l`` is a softmax over all
``(l, k)`` of ``(U_m q) . (V_m k) / sqrt(C_v)``, and the output is
``sum_m W_m sum_{l,k} A_mlqk W'_m f_lk``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_CHANNELS = 256
DEFAULT_LEVELS = 4
DEFAULT_HEADS = 8
DEFAULT_QUERIES = 300
POS_TEMPERATURE = 10000.0


@dataclass
class FeaturePyramid:
    """Feature maps of shape ``(H_l, W_l, C)``, finest first."""

    levels: list

    def __post_init__(self):
        if not self.levels:
            raise ValueError("pyramid needs at least one level")
        self.levels = [np.asarray(f, dtype=np.float64) for f in self.levels]
        c = self.levels[0].shape[-1]
        for f in self.levels:
            if f.ndim != 3 or f.shape[-1] != c or f.shape[0] < 1 or f.shape[1] < 1:
                raise ValueError(f"level shape {f.shape} inconsistent with C={c}")
            if not np.all(np.isfinite(f)):
                raise ValueError("non-finite pyramid features")

    @property
    def channels(self) -> int:
        return self.levels[0].shape[-1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [f.shape[:2] for f in self.levels]


@dataclass
class AttentionParams:
    """Per-head maps; arrays are stacked over heads.

    ``out_proj[m]`` is ``(C, C_v)``, ``value_proj``, ``query_proj`` and
    ``key_proj`` are ``(C_v, C)``.
    """

    out_proj: np.ndarray
    value_proj: np.ndarray
    query_proj: np.ndarray
    key_proj: np.ndarray

    def __post_init__(self):
        self.out_proj = np.asarray(self.out_proj, dtype=np.float64)
        self.value_proj = np.asarray(self.value_proj, dtype=np.float64)
        self.query_proj = np.asarray(self.query_proj, dtype=np.float64)
        self.key_proj = np.asarray(self.key_proj, dtype=np.float64)
        m, c, cv = self.out_proj.shape
        if c != m * cv:
            raise ValueError(f"C={c} must equal heads*C_v={m}*{cv}")
        for name in ("value_proj", "query_proj", "key_proj"):
            if getattr(self, name).shape != (m, cv, c):
                raise ValueError(f"{name} must have shape {(m, cv, c)}")
        for arr in (self.out_proj, self.value_proj, self.query_proj, self.key_proj):
            if not np.all(np.isfinite(arr)):
                raise ValueError("non-finite attention parameters")

    @property
    def heads(self) -> int:
        return self.out_proj.shape[0]

    @property
    def channels(self) -> int:
        return self.out_proj.shape[1]

    @property
    def head_dim(self) -> int:
        return self.out_proj.shape[2]

    @classmethod
    def random(cls, channels: int = DEFAULT_CHANNELS, heads: int = DEFAULT_HEADS, seed: int = 0):
        if channels % heads:
            raise ValueError(f"channels {channels} not divisible by heads {heads}")
        cv = channels // heads
        rng = np.random.default_rng(seed)
        scale = 1.0 / np.sqrt(channels)
        return cls(
            out_proj=rng.normal(0, 1.0 / np.sqrt(cv), (heads, channels, cv)),
            value_proj=rng.normal(0, scale, (heads, cv, channels)),
            query_proj=rng.normal(0, scale, (heads, cv, channels)),
            key_proj=rng.normal(0, scale, (heads, cv, channels)),
        )

    @classmethod
    def identity(cls, channels: int):
        eye = np.eye(channels)[None]
        return cls(eye, eye, eye, eye)


@dataclass
class QuerySet:
    """Query features ``(N, C)`` with optional positional embeddings ``(N, C)``."""

    queries: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        self.queries = np.atleast_2d(np.asarray(self.queries, dtype=np.float64))
        if self.queries.shape[0] < 1:
            raise ValueError("need at least one query")
        if self.positions is not None:
            self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
            if self.positions.shape != self.queries.shape:
                raise ValueError("query positions must match query shape")


def positional_encoding(height: int, width: int, channels: int) -> np.ndarray:
    """Fixed sine/cosine encoding of shape ``(H, W, C)``.

    The first half of the channels encodes the row, the second half the
    column.  Within each half, even channels are sines and odd channels
    cosines at geometrically spaced frequencies.
    """
    if channels % 4 or channels <= 0:
        raise ValueError(f"channels must be a positive multiple of 4, got {channels}")
    if height < 1 or width < 1:
        raise ValueError("grid dims must be positive")
    half = channels // 2
    freq = POS_TEMPERATURE ** (-2.0 * np.arange(half // 2) / half)

    def encode(pos):
        ang = pos[:, None] * freq[None, :]
        out = np.empty((len(pos), half))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    ey = encode(np.arange(height, dtype=np.float64))
    ex = encode(np.arange(width, dtype=np.float64))
    pe = np.empty((height, width, channels))
    pe[:, :, :half] = ey[:, None, :]
    pe[:, :, half:] = ex[None, :, :]
    return pe


def learned_encoding(height: int, width: int, channels: int, seed: int = 0) -> np.ndarray:
    """Randomly initialized stand-in for a trained positional table."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 0.02, (height, width, channels))


def pyramid_encodings(pyramid: FeaturePyramid, mode: str = "sine", seed: int = 0) -> list:
    if mode == "sine":
        return [positional_encoding(h, w, pyramid.channels) for h, w in pyramid.shapes]
    if mode == "learned":
        return [
            learned_encoding(h, w, pyramid.channels, seed + lvl)
            for lvl, (h, w) in enumerate(pyramid.shapes)
        ]
    raise ValueError(f"unknown positional encoding mode {mode!r}")


def _avg_pool2(f: np.ndarray) -> np.ndarray:
    h, w, c = f.shape
    oh, ow = -(-h // 2), -(-w // 2)
    padded = np.zeros((2 * oh, 2 * ow, c))
    count = np.zeros((2 * oh, 2 * ow, 1))
    padded[:h, :w] = f
    count[:h, :w] = 1.0
    sums = padded.reshape(oh, 2, ow, 2, c).sum(axis=(1, 3))
    counts = count.reshape(oh, 2, ow, 2, 1).sum(axis=(1, 3))
    return sums / counts


def build_pyramid(base, levels: int = DEFAULT_LEVELS) -> FeaturePyramid:
    """Stack ``levels`` maps, each a stride-2 average pool of the previous.

    Odd edges are averaged over the cells that exist, so constants are
    preserved for any size; the mean is conserved exactly when every
    halving is even.
    """
    f = np.asarray(base, dtype=np.float64)
    if f.ndim != 3:
        raise ValueError(f"base map must be (H, W, C), got {f.shape}")
    if levels < 1:
        raise ValueError("need at least one level")
    need = 2 ** (levels - 1)
    if f.shape[0] < need or f.shape[1] < need:
        raise ValueError(f"base {f.shape[:2]} too small for {levels} levels (need >= {need})")
    maps = [f]
    for _ in range(levels - 1):
        maps.append(_avg_pool2(maps[-1]))
    return FeaturePyramid(maps)


def _flatten(levels) -> np.ndarray:
    return np.concatenate([np.asarray(f, dtype=np.float64).reshape(-1, np.shape(f)[-1]) for f in levels])


def attention_logits(query, keys, params: AttentionParams, head: int) -> np.ndarray:
    """Scaled scores of one query against the flat key matrix ``(K, C)``."""
    q = params.query_proj[head] @ query
    k = keys @ params.key_proj[head].T
    return k @ q / np.sqrt(params.head_dim)


def attention_weights(query, keys, params: AttentionParams, head: int) -> list:
    """Softmax weights of one query over all keys of all levels.

    ``keys`` is a list of per-level arrays ``(K_l, C)`` (or ``(H_l, W_l, C)``);
    the result is the matching list of weight vectors, summing to one in
    total.
    """
    query = np.asarray(query, dtype=np.float64)
    c = params.channels
    if query.shape != (c,):
        raise ValueError(f"query must have shape ({c},), got {query.shape}")
    sizes = []
    for f in keys:
        f = np.asarray(f)
        if f.shape[-1] != c:
            raise ValueError(f"key features have {f.shape[-1]} channels, expected {c}")
        sizes.append(int(np.prod(f.shape[:-1])))
    if sum(sizes) == 0:
        raise ValueError("no keys to attend to")
    if not 0 <= head < params.heads:
        raise ValueError(f"head {head} out of range")
    logits = attention_logits(query, _flatten(keys), params, head)
    w = np.exp(logits - logits.max())
    w /= w.sum()
    return np.split(w, np.cumsum(sizes)[:-1])


def multiscale_attention(
    queries,
    levels,
    params: AttentionParams,
    query_pos=None,
    key_pos=None,
    return_weights: bool = False,
):
    """Attention of ``(N, C)`` queries over per-level keys ``levels``.

    ``key_pos`` (same layout as ``levels``) and ``query_pos`` are added
    to keys and queries for the weights only; values use raw features.
    """
    z = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    c = params.channels
    if z.shape[1] != c:
        raise ValueError(f"queries have {z.shape[1]} channels, expected {c}")
    feats = _flatten(levels)
    if feats.shape[1] != c:
        raise ValueError(f"features have {feats.shape[1]} channels, expected {c}")
    keys = feats if key_pos is None else feats + _flatten(key_pos)
    if keys.shape != feats.shape:
        raise ValueError("key positions must match feature layout")
    zq = z if query_pos is None else z + np.asarray(query_pos, dtype=np.float64)
    if zq.shape != z.shape:
        raise ValueError("query positions must match query shape")

    weights = np.empty((params.heads, len(z), len(feats)))
    scale = np.sqrt(params.head_dim)
    for m in range(params.heads):
        qm = zq @ params.query_proj[m].T
        km = keys @ params.key_proj[m].T
        logit = qm @ km.T / scale
        logit -= logit.max(axis=1, keepdims=True)
        e = np.exp(logit)
        weights[m] = e / e.sum(axis=1, keepdims=True)
    out = aggregate(weights, feats, params)
    return (out, weights) if return_weights else out


def aggregate(weights: np.ndarray, feats, params: AttentionParams) -> np.ndarray:
    """Value path: ``sum_m W_m (A_m @ (f W'_m^T))`` for fixed weights ``(M, N, K)``."""
    feats = _flatten(feats) if isinstance(feats, (list, tuple)) else np.asarray(feats, dtype=np.float64)
    out = np.zeros((weights.shape[1], params.channels))
    for m in range(params.heads):
        values = feats @ params.value_proj[m].T
        out += (weights[m] @ values) @ params.out_proj[m].T
    return out


def msma_forward(
    queries: QuerySet,
    pyramid: FeaturePyramid,
    params: AttentionParams,
    pos_mode: str = "sine",
    seed: int = 0,
) -> np.ndarray:
    """Multi-scale attention of a query set over a pyramid, returning ``(N, C)``."""
    if pyramid.channels != params.channels:
        raise ValueError(f"pyramid has C={pyramid.channels}, params expect {params.channels}")
    if queries.queries.shape[1] != params.channels:
        raise ValueError("query width does not match params")
    key_pos = pyramid_encodings(pyramid, pos_mode, seed)
    return multiscale_attention(
        queries.queries, pyramid.levels, params, queries.positions, key_pos
    )
