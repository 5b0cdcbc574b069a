"""Synthetic biased cohorts and a per-voxel logistic segmenter.

Each case holds one ellipsoidal target structure near the middle of the
volume. All cases get a random global scale and offset. Group 1 cases
additionally get a localized outward bump of the surface inside a fixed cone
of directions, whose height is drawn from N(bias_mu, bias_sigma) voxels and
clamped at zero. Group 2 cases carry the global variation only.

The segmenter is logistic regression on seven per-voxel features, trained
from zero by full-batch gradient descent on binary cross-entropy plus an L2
penalty, over a class-balanced voxel subsample.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.special import expit

from .metrics import G1, G2, GroupId
from .volume import VolumeFormatError, VolumeShape, check_scalar, read_fvol, write_fvol

N_FEATURES = 7
FEATURE_NAMES = ("bias", "intensity", "smoothed", "x", "y", "z", "radial")


@dataclass(frozen=True)
class CohortConfig:
    volume_shape: VolumeShape = VolumeShape(24, 24, 24)
    n_per_group: int = 40
    bias_mu: float = 4.0
    bias_sigma: float = 2.0
    noise_sigma: float = 2.0
    seed: int = 0
    # shared ("global") shape variation
    semi_axes: tuple[float, float, float] = (5.0, 4.0, 3.5)
    scale_sigma: float = 0.05
    max_offset: float = 0.5
    # smooth nuisance field added to every image
    gradient_amplitude: float = 0.3
    bump_half_angle_deg: float = 70.0
    bump_axis: tuple[float, float, float] = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if not isinstance(self.volume_shape, VolumeShape):
            object.__setattr__(self, "volume_shape", VolumeShape(*self.volume_shape))
        object.__setattr__(self, "semi_axes", tuple(float(a) for a in self.semi_axes))
        object.__setattr__(self, "bump_axis", tuple(float(a) for a in self.bump_axis))
        if len(self.bump_axis) != 3 or not np.linalg.norm(self.bump_axis) > 0:
            raise ValueError("bump_axis must be a nonzero 3-vector")
        if int(self.n_per_group) != self.n_per_group or self.n_per_group < 1:
            raise ValueError(f"n_per_group must be a positive integer, got {self.n_per_group!r}")
        if self.bias_sigma < 0:
            raise ValueError("bias_sigma must be nonnegative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.scale_sigma < 0 or self.max_offset < 0 or self.gradient_amplitude < 0:
            raise ValueError("scale_sigma, max_offset and gradient_amplitude must be nonnegative")
        if not 0 < self.bump_half_angle_deg <= 180:
            raise ValueError("bump_half_angle_deg must lie in (0, 180]")
        if min(self.semi_axes) <= 0:
            raise ValueError("semi_axes must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["volume_shape"] = [self.volume_shape.nx, self.volume_shape.ny, self.volume_shape.nz]
        d["semi_axes"] = list(self.semi_axes)
        d["bump_axis"] = list(self.bump_axis)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CohortConfig":
        d = dict(d)
        if "volume_shape" in d:
            d["volume_shape"] = VolumeShape(*d["volume_shape"])
        for key in ("semi_axes", "bump_axis"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


PRESETS = {
    "strong": dict(bias_mu=4.0, bias_sigma=2.0),
    "weak": dict(bias_mu=2.0, bias_sigma=2.0),
    "none": dict(bias_mu=0.0, bias_sigma=0.0),
}


def preset(name: str, **overrides) -> CohortConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown bias preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return CohortConfig(**{**base, **overrides})


@dataclass
class Case:
    case_id: str
    group: GroupId
    image: np.ndarray
    truth: np.ndarray
    bump: float = 0.0
    _features: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.image.shape != self.truth.shape:
            raise ValueError("image and truth shapes differ")
        if not self.truth.any():
            raise ValueError(f"case {self.case_id} has an empty target")
        check_scalar(self.image)

    @property
    def features(self) -> np.ndarray:
        if self._features is None:
            self._features = feature_matrix(self.image)
        return self._features


def case_id_for(index: int) -> str:
    return f"case_{index:04d}"


def group_for(index: int) -> GroupId:
    return G1 if index % 2 == 0 else G2


def _check_fits(cfg: CohortConfig) -> None:
    nz, ny, nx = cfg.volume_shape.array_shape
    reach = np.array(cfg.semi_axes) * (1.0 + 3.0 * cfg.scale_sigma) + cfg.max_offset + 1.0
    half = np.array([nx, ny, nz]) / 2.0
    if np.any(reach > half):
        raise ValueError(
            f"volume {cfg.volume_shape} too small for semi-axes {cfg.semi_axes} "
            f"with scale/offset variation"
        )


def _make_case(cfg: CohortConfig, index: int) -> Case:
    shape = cfg.volume_shape
    rng = np.random.default_rng([cfg.seed, index])
    group = group_for(index)

    # draw every random quantity for every case so both groups share one distribution
    scale = float(np.clip(1.0 + cfg.scale_sigma * rng.standard_normal(), 1 - 3 * cfg.scale_sigma, 1 + 3 * cfg.scale_sigma))
    offset = rng.uniform(-cfg.max_offset, cfg.max_offset, size=3)
    bump = max(0.0, float(rng.normal(cfg.bias_mu, cfg.bias_sigma)))
    grad_dir = rng.standard_normal(3)
    grad_dir /= np.linalg.norm(grad_dir)
    noise = rng.standard_normal(shape.array_shape)
    if group != G1:
        bump = 0.0

    z, y, x = np.indices(shape.array_shape, dtype=float)
    center = np.array([(shape.nx - 1) / 2, (shape.ny - 1) / 2, (shape.nz - 1) / 2]) + offset
    d = np.stack([x - center[0], y - center[1], z - center[2]], axis=-1)
    axes = np.array(cfg.semi_axes) * scale
    rho = np.sqrt(((d / axes) ** 2).sum(axis=-1))
    dist = np.linalg.norm(d, axis=-1)
    truth = rho <= 1.0
    if bump > 0:
        with np.errstate(invalid="ignore", divide="ignore"):
            axis = np.array(cfg.bump_axis) / np.linalg.norm(cfg.bump_axis)
            cos_t = np.where(dist > 0, d @ axis / np.where(dist > 0, dist, 1.0), 1.0)
            surface = np.where(rho > 0, dist / np.where(rho > 0, rho, 1.0), 0.0)
        theta = np.arccos(np.clip(cos_t, -1.0, 1.0))
        half_angle = np.deg2rad(cfg.bump_half_angle_deg)
        taper = np.where(theta < half_angle, np.cos(0.5 * np.pi * theta / half_angle) ** 2, 0.0)
        truth |= dist <= surface + bump * taper

    coords = np.stack(_normalized_coords(shape), axis=-1)
    background = cfg.gradient_amplitude * (coords @ grad_dir)
    image = truth.astype(float) + background + cfg.noise_sigma * noise
    return Case(case_id_for(index), group, image, truth, bump)


def generate_cohort(cfg: CohortConfig) -> list[Case]:
    """``2 * n_per_group`` cases, alternating G1, G2 by index; deterministic in ``cfg.seed``."""
    _check_fits(cfg)
    return [_make_case(cfg, i) for i in range(2 * cfg.n_per_group)]


def split_cohort(cases: Sequence[Case], n_test_per_group: int) -> tuple[list[Case], list[Case]]:
    """Hold out the last ``n_test_per_group`` cases of each group as the test set."""
    by_group: dict[GroupId, list[Case]] = {}
    for c in cases:
        by_group.setdefault(c.group, []).append(c)
    test_ids = set()
    for g, members in by_group.items():
        if len(members) <= n_test_per_group:
            raise ValueError(f"group {g.name} has {len(members)} cases, cannot hold out {n_test_per_group}")
        test_ids.update(c.case_id for c in members[len(members) - n_test_per_group:])
    train = [c for c in cases if c.case_id not in test_ids]
    test = [c for c in cases if c.case_id in test_ids]
    return train, test


# --- features --------------------------------------------------------------


def _normalized_coords(shape: VolumeShape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    def axis(n):
        return np.zeros(n) if n == 1 else np.linspace(-1.0, 1.0, n)

    z, y, x = np.meshgrid(axis(shape.nz), axis(shape.ny), axis(shape.nx), indexing="ij")
    return x, y, z


def _boxcar(image: np.ndarray) -> np.ndarray:
    total = ndimage.uniform_filter(image, size=3, mode="constant", cval=0.0)
    count = ndimage.uniform_filter(np.ones_like(image), size=3, mode="constant", cval=0.0)
    return total / count


def feature_matrix(image: np.ndarray) -> np.ndarray:
    """Features for every voxel, shape ``(n_voxels, 7)`` in flat x-fastest order."""
    image = check_scalar(image)
    shape = VolumeShape.of(image)
    x, y, z = _normalized_coords(shape)
    radial = np.sqrt(x**2 + y**2 + z**2) / np.sqrt(3.0)
    cols = (np.ones_like(image), image, _boxcar(image), x, y, z, radial)
    return np.stack([c.ravel() for c in cols], axis=1)


def extract_features(image: np.ndarray, voxel: tuple[int, int, int]) -> np.ndarray:
    """Feature vector of one voxel given as ``(x, y, z)``."""
    image = check_scalar(image)
    shape = VolumeShape.of(image)
    return feature_matrix(image)[shape.flat_index(*voxel)]


# --- segmenter -------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    # the loss is badly conditioned (Hessian eigenvalues ~0.02 to ~2.4), so a
    # large step and 500 epochs are needed to get within 1e-3 of the optimum
    learning_rate: float = 3.0
    epochs: int = 500
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.epochs < 0 or self.l2 < 0:
            raise ValueError(f"invalid training hyperparameters {self}")


def loss_and_grad(params: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy plus ``l2 * ||w||^2`` (bias excluded) and its gradient."""
    logits = X @ params
    p = expit(logits)
    # log(1 + e^z) - y z, stable for large |z|
    bce = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
    penalized = params.copy()
    penalized[0] = 0.0
    loss = bce + l2 * float(penalized @ penalized)
    grad = X.T @ (p - y) / len(y) + 2.0 * l2 * penalized
    return loss, grad


def training_sample(cases: Sequence[Case], seed: int) -> tuple[np.ndarray, np.ndarray]:
    """All foreground voxels plus as many random background voxels, per case."""
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for c in cases:
        flat = c.truth.ravel()
        fg = np.flatnonzero(flat)
        bg = np.flatnonzero(~flat)
        pick = rng.choice(bg, size=min(len(fg), len(bg)), replace=False)
        idx = np.concatenate([fg, np.sort(pick)])
        xs.append(c.features[idx])
        ys.append(flat[idx].astype(float))
    return np.concatenate(xs), np.concatenate(ys)


def train(labeled: Sequence[Case], hyper: TrainConfig = TrainConfig()) -> np.ndarray:
    if not labeled:
        raise ValueError("cannot train on an empty labeled set")
    X, y = training_sample(labeled, hyper.seed)
    params = np.zeros(N_FEATURES)
    for _ in range(hyper.epochs):
        _, grad = loss_and_grad(params, X, y, hyper.l2)
        params -= hyper.learning_rate * grad
    return params


def predict(params: np.ndarray, image_or_case) -> np.ndarray:
    """Foreground probability per voxel, same shape as the image."""
    if isinstance(image_or_case, Case):
        feats, shape = image_or_case.features, image_or_case.image.shape
    else:
        image = check_scalar(image_or_case)
        feats, shape = feature_matrix(image), image.shape
    params = np.asarray(params, dtype=float)
    if params.shape != (N_FEATURES,) or not np.all(np.isfinite(params)):
        raise ValueError(f"params must be {N_FEATURES} finite values")
    return expit(feats @ params).reshape(shape)


# --- cohort I/O ------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_cohort(
    cases: Sequence[Case], cfg: CohortConfig, out_dir: str | Path, preset_name: str | None = None
) -> Path:
    """Write one FVOL1 image and mask per case plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for c in cases:
        img, lab = f"{c.case_id}_image.fvol", f"{c.case_id}_truth.fvol"
        write_fvol(out / img, c.image)
        write_fvol(out / lab, c.truth)
        entries.append({
            "case_id": c.case_id, "group": c.group.name, "group_id": c.group.id,
            "image": img, "truth": lab, "bump": c.bump,
            "sha256": {"image": _sha256(out / img), "truth": _sha256(out / lab)},
        })
    manifest = {
        "format": "fairal-cohort/1",
        "preset": preset_name,
        "generator": cfg.to_dict(),
        "seed": cfg.seed,
        "cases": entries,
    }
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_manifest(cohort_dir: str | Path) -> dict:
    path = Path(cohort_dir) / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no cohort manifest at {path}")
    return json.loads(path.read_text())


def load_cohort(cohort_dir: str | Path) -> tuple[list[Case], CohortConfig]:
    root = Path(cohort_dir)
    manifest = read_manifest(root)
    cfg = CohortConfig.from_dict(manifest["generator"])
    cases = []
    for e in manifest["cases"]:
        for kind in ("image", "truth"):
            want = e.get("sha256", {}).get(kind)
            if want is not None and _sha256(root / e[kind]) != want:
                raise VolumeFormatError(f"{e[kind]} does not match its manifest digest")
        cases.append(Case(
            e["case_id"], GroupId(e["group_id"], e["group"]),
            read_fvol(root / e["image"]), read_fvol(root / e["truth"]), e.get("bump", 0.0),
        ))
    return cases, cfg
