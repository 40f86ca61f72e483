"""Seeded synthetic data: paired-view embeddings and toy detection scenes.

All randomness goes through counter-based Philox streams keyed by
``(seed, stream, index)``, so scene ``i`` depends only on the seed and
``i``, never on how many other scenes were drawn before it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import BoxCxcywh, convert

N_CLASSES = 3
CLASS_NAMES = ("car", "person", "bicycle")
DEFAULT_IMAGE = (640, 512)

_VIEW_MAPS, _LATENT, _NOISE_A, _NOISE_B, _SCENE, _FEATURES, _CODES = range(7)
_BOX_PAIRS = 8


def stream(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), kind, index])
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SceneSpec:
    n_scenes: int = 64
    latent_dim: int = 32
    view_noise_sigma: float = 0.1
    seed: int = 0
    view_dim: int | None = None  # defaults to latent_dim

    def __post_init__(self):
        if self.n_scenes < 2:
            raise ValueError("need at least 2 scenes")
        if self.latent_dim < 2:
            raise ValueError("latent_dim must be >= 2")
        if self.view_noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.view_dim is not None and self.view_dim < 1:
            raise ValueError("view_dim must be positive")

    @property
    def obs_dim(self) -> int:
        return self.view_dim if self.view_dim is not None else self.latent_dim


@dataclass
class PairedViews:
    latents: np.ndarray  # (n, latent_dim)
    view_a: np.ndarray  # (n, obs_dim)
    view_b: np.ndarray
    map_a: np.ndarray  # (obs_dim, latent_dim)
    map_b: np.ndarray

    @property
    def scene_ids(self) -> np.ndarray:
        return np.arange(len(self.latents))

    def interleaved(self) -> np.ndarray:
        """Views in the parity layout ``[a0, b0, a1, b1, ...]``."""
        n, d = self.view_a.shape
        out = np.empty((2 * n, d))
        out[0::2] = self.view_a
        out[1::2] = self.view_b
        return out

    def to_dict(self) -> dict:
        return {
            "scenes": [
                {"scene_id": i, "view_a": a.tolist(), "view_b": b.tolist()}
                for i, (a, b) in enumerate(zip(self.view_a, self.view_b))
            ]
        }


def gen_paired_views(spec: SceneSpec) -> PairedViews:
    """Two noisy linear views ``A z + e_a`` and ``B z + e_b`` of each latent ``z``."""
    d, k = spec.obs_dim, spec.latent_dim
    maps = stream(spec.seed, _VIEW_MAPS)
    map_a = maps.normal(0.0, 1.0 / np.sqrt(k), (d, k))
    map_b = maps.normal(0.0, 1.0 / np.sqrt(k), (d, k))
    z = np.stack([stream(spec.seed, _LATENT, i).normal(size=k) for i in range(spec.n_scenes)])
    sigma = spec.view_noise_sigma
    na = np.stack([stream(spec.seed, _NOISE_A, i).normal(size=d) for i in range(spec.n_scenes)])
    nb = np.stack([stream(spec.seed, _NOISE_B, i).normal(size=d) for i in range(spec.n_scenes)])
    return PairedViews(z, z @ map_a.T + sigma * na, z @ map_b.T + sigma * nb, map_a, map_b)


@dataclass
class DetectionScene:
    width: int
    height: int
    objects: list  # [(category_id, BoxCxcywh)]
    features: np.ndarray | None = field(default=None, repr=False)

    @property
    def labels(self) -> list[int]:
        return [c for c, _ in self.objects]

    def ground_truth(self) -> list:
        return list(self.objects)

    def to_coco(self, image_id: int = 0, start_ann_id: int = 0) -> dict:
        anns = []
        for j, (c, b) in enumerate(self.objects):
            xy = convert(b, self.width, self.height)
            anns.append({
                "id": start_ann_id + j,
                "image_id": image_id,
                "category_id": c,
                "bbox": [xy.x1, xy.y1, xy.x2 - xy.x1, xy.y2 - xy.y1],
                "bbox_cxcywh": [b.cx, b.cy, b.w, b.h],
            })
        return {
            "images": [{"id": image_id, "width": self.width, "height": self.height}],
            "annotations": anns,
            "categories": [{"id": i, "name": n} for i, n in enumerate(CLASS_NAMES)],
        }


def _blob_features(objects, grid, channels, rng) -> np.ndarray:
    gh, gw = grid
    ys = (np.arange(gh) + 0.5) / gh
    xs = (np.arange(gw) + 0.5) / gw
    codes = stream(0, _CODES).normal(size=(N_CLASSES, channels))
    feat = 0.05 * rng.normal(size=(gh, gw, channels))
    for c, b in objects:
        bump = np.exp(
            -((ys[:, None] - b.cy) ** 2) / (2 * (b.h / 2) ** 2)
            - ((xs[None, :] - b.cx) ** 2) / (2 * (b.w / 2) ** 2)
        )
        feat += bump[:, :, None] * codes[c][None, None, :]
    return feat


def gen_detection_scene(
    n_objects: int,
    seed: int,
    width: int = DEFAULT_IMAGE[0],
    height: int = DEFAULT_IMAGE[1],
    feature_grid: tuple[int, int] | None = None,
    channels: int = 16,
    index: int = 0,
) -> DetectionScene:
    """A scene with ``n_objects`` boxes of side 0.05-0.5 kept inside the unit square.

    Classes are uniform over car/person/bicycle.  With ``feature_grid``
    a ``(H, W, channels)`` map is attached where each object adds a
    Gaussian bump carrying a class-specific channel code.  ``index``
    selects an independent scene under the same seed.
    """
    if not 1 <= n_objects <= 10:
        raise ValueError(f"n_objects must be in [1, 10], got {n_objects}")
    rng = stream(seed, _SCENE, index)
    objects = []
    for _ in range(n_objects):
        w, h = rng.uniform(0.05, 0.5, size=2)
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        c = int(rng.integers(N_CLASSES))
        objects.append((c, BoxCxcywh(float(cx), float(cy), float(w), float(h))))
    features = None
    if feature_grid is not None:
        features = _blob_features(objects, feature_grid, channels, stream(seed, _FEATURES, index))
    return DetectionScene(width, height, objects, features)


def random_box(rng: np.random.Generator, lo: float = 0.05, hi: float = 0.5) -> np.ndarray:
    """``(cx, cy, w, h)`` with sides in ``[lo, hi]`` lying inside the unit square."""
    w, h = rng.uniform(lo, hi, 2)
    return np.array([rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h])


def gen_box_pairs(n: int, seed: int):
    """``n`` independent (start, target) box pairs for regression demos."""
    init, targets = [], []
    for i in range(n):
        rng = stream(seed, _BOX_PAIRS, i)
        init.append(random_box(rng))
        targets.append(random_box(rng))
    return init, targets
