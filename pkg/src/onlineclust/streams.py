"""Survey streams: dataset I/O, trajectory orderings and a synthetic generator."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Observation",
    "SynthConfig",
    "DatasetError",
    "load_dataset",
    "save_dataset",
    "order_lawnmower",
    "order_random_waypoints",
    "order_stream",
    "synth_generate",
    "class_means",
    "as_arrays",
]


class DatasetError(ValueError):
    pass


@dataclass
class Observation:
    id: str
    easting: float
    northing: float
    label: int | None
    feature: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.id == other.id
            and self.easting == other.easting
            and self.northing == other.northing
            and self.label == other.label
            and np.array_equal(self.feature, other.feature)
        )


def as_arrays(obs: Sequence[Observation]):
    """``(features, positions, labels)`` arrays; missing labels become -1."""
    if not obs:
        return np.empty((0, 0)), np.empty((0, 2)), np.empty(0, dtype=int)
    feats = np.stack([o.feature for o in obs]).astype(float)
    pos = np.array([(o.easting, o.northing) for o in obs], dtype=float)
    labels = np.array([-1 if o.label is None else o.label for o in obs], dtype=int)
    return feats, pos, labels


# -- CSV ---------------------------------------------------------------------

def load_dataset(path, n_classes: int | None = None) -> list[Observation]:
    """Parse a dataset CSV with header ``id,x,y,label,f0,...,f{d-1}``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file, expected a header") from None
        if header[:4] != ["id", "x", "y", "label"]:
            raise DatasetError(f"{path}: header must start with id,x,y,label")
        feat_cols = header[4:]
        if not feat_cols or feat_cols != [f"f{i}" for i in range(len(feat_cols))]:
            raise DatasetError(f"{path}: feature columns must be f0..f{{d-1}}")
        d = len(feat_cols)
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4 + d:
                raise DatasetError(f"{path}:{lineno}: expected {4 + d} fields, got {len(row)}")
            try:
                label = int(row[3]) if row[3].strip() != "" else None
                feat = np.array([float(v) for v in row[4:]])
                obs = Observation(row[0], float(row[1]), float(row[2]), label, feat)
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if not np.all(np.isfinite(feat)):
                raise DatasetError(f"{path}:{lineno}: non-finite feature value")
            if label is not None and (label < 0 or (n_classes is not None and label >= n_classes)):
                raise DatasetError(f"{path}:{lineno}: label {label} out of range")
            out.append(obs)
    return out


def save_dataset(obs: Sequence[Observation], path) -> None:
    path = Path(path)
    d = obs[0].feature.shape[0] if obs else 0
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "label"] + [f"f{i}" for i in range(d)])
        for o in obs:
            if o.feature.shape[0] != d:
                raise DatasetError(f"observation {o.id} has dimension {o.feature.shape[0]}, expected {d}")
            w.writerow([o.id, repr(float(o.easting)), repr(float(o.northing)),
                        "" if o.label is None else int(o.label)] + [repr(float(v)) for v in o.feature])


# -- orderings ---------------------------------------------------------------

def order_lawnmower(obs: Sequence[Observation], axis: str = "WE",
                    track_spacing: float | None = None) -> list[Observation]:
    """Boustrophedon raster.

    ``WE`` flies east-west tracks stacked from south to north; ``NS`` flies
    north-south tracks stacked from west to east. Direction alternates on
    every track. The default spacing gives about 20 tracks.
    """
    if not obs:
        return []
    pos = np.array([(o.easting, o.northing) for o in obs], dtype=float)
    axis = axis.upper()
    if axis == "WE":
        along, cross = pos[:, 0], pos[:, 1]
    elif axis == "NS":
        along, cross = pos[:, 1], pos[:, 0]
    else:
        raise ValueError(f"axis must be WE or NS, got {axis!r}")
    extent = cross.max() - cross.min()
    if track_spacing is None:
        track_spacing = extent / 20 if extent > 0 else 1.0
    track = np.floor((cross - cross.min()) / track_spacing).astype(int)
    direction = np.where(track % 2 == 0, along, -along)
    order = np.lexsort((np.arange(len(obs)), direction, track))
    return [obs[i] for i in order]


def _segment_projection(pos: np.ndarray, a: np.ndarray, b: np.ndarray):
    ab = b - a
    length2 = float(ab @ ab)
    if length2 == 0:
        t = np.zeros(pos.shape[0])
    else:
        t = np.clip((pos - a) @ ab / length2, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(pos - closest, axis=1), t


def order_random_waypoints(obs: Sequence[Observation], n_waypoints: int = 40,
                           seed: int = 0) -> list[Observation]:
    """Straight transects between random waypoints in the bounding box.

    Each observation is attached to its nearest transect and emitted in
    transect order, then by position along the transect.
    """
    if not obs:
        return []
    if n_waypoints < 2:
        raise ValueError("need at least two waypoints")
    pos = np.array([(o.easting, o.northing) for o in obs], dtype=float)
    rng = np.random.default_rng(seed)
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    wp = lo + rng.random((n_waypoints, 2)) * (hi - lo)
    best = np.full(len(obs), np.inf)
    seg = np.zeros(len(obs), dtype=int)
    along = np.zeros(len(obs))
    for s in range(n_waypoints - 1):
        dist, t = _segment_projection(pos, wp[s], wp[s + 1])
        better = dist < best
        best[better] = dist[better]
        seg[better] = s
        along[better] = t[better]
    order = np.lexsort((np.arange(len(obs)), along, seg))
    return [obs[i] for i in order]


def order_stream(obs: Sequence[Observation], ordering: str, seed: int = 0) -> list[Observation]:
    ordering = ordering.upper()
    if ordering in ("WE", "NS"):
        return order_lawnmower(obs, ordering)
    if ordering == "RANDOM":
        return order_random_waypoints(obs, seed=seed)
    raise ValueError(f"unknown ordering {ordering!r}")


# -- synthetic data ------------------------------------------------------------

@dataclass
class SynthConfig:
    """Spatially patchy, labelled feature data.

    ``planted`` optionally makes class ``planted[1]`` a close sub-mode of class
    ``planted[0]``: its mean sits ``submode_separation`` noise units from the
    host mean, and its patches lie only in the part of the domain north of
    ``reveal_fraction`` of the height, so a south-to-north survey meets it late.
    """

    n_classes: int = 5
    n_points: int = 20000
    class_proportions: Sequence[float] | None = None
    patch_layout: str = "GRID"
    feature_separation: float = 8.0
    feature_noise: float = 1.0
    d: int = 16
    seed: int = 0
    extent: tuple[float, float] = (1000.0, 1000.0)
    grid_cells: int = 10
    planted: tuple[int, int] | None = None
    submode_separation: float = 4.5
    reveal_fraction: float = 0.5

    def __post_init__(self):
        if self.class_proportions is None:
            self.class_proportions = [1.0 / self.n_classes] * self.n_classes
        p = np.asarray(self.class_proportions, dtype=float)
        if p.shape != (self.n_classes,) or np.any(p <= 0) or abs(p.sum() - 1) > 1e-9:
            raise ValueError("class_proportions must be n_classes positive values summing to 1")
        if self.n_points < self.n_classes * (self.d + 1):
            raise ValueError("n_points must be at least n_classes * (d + 1)")
        self.patch_layout = self.patch_layout.upper()
        if self.patch_layout not in ("GRID", "VORONOI"):
            raise ValueError(f"unknown patch layout {self.patch_layout!r}")


def _class_means(cfg: SynthConfig, rng: np.random.Generator, max_tries: int = 2000) -> np.ndarray:
    radius = cfg.feature_separation * cfg.feature_noise
    free = [c for c in range(cfg.n_classes) if cfg.planted is None or c != cfg.planted[1]]
    means = np.zeros((cfg.n_classes, cfg.d))
    placed: list[int] = []
    for c in free:
        for _ in range(max_tries):
            u = rng.standard_normal(cfg.d)
            u *= radius / np.linalg.norm(u)
            if all(np.linalg.norm(u - means[p]) >= radius for p in placed):
                means[c] = u
                placed.append(c)
                break
        else:
            raise ValueError(
                f"could not place {cfg.n_classes} class means {radius:g} apart in d={cfg.d}; "
                "lower feature_separation or raise d"
            )
    if cfg.planted is not None:
        host, guest = cfg.planted
        u = rng.standard_normal(cfg.d)
        means[guest] = means[host] + u * (cfg.submode_separation * cfg.feature_noise / np.linalg.norm(u))
    return means


def _grid_patches(cfg: SynthConfig, rng: np.random.Generator):
    g = cfg.grid_cells
    w, h = cfg.extent
    cells = np.array([(i, j) for j in range(g) for i in range(g)])  # (col, row)
    n_cells = cells.shape[0]
    p = np.asarray(cfg.class_proportions)
    quota = np.maximum(1, np.round(p * n_cells).astype(int))
    while quota.sum() > n_cells:
        quota[np.argmax(quota)] -= 1
    while quota.sum() < n_cells:
        quota[np.argmax(p * n_cells - quota)] += 1
    owner = np.full(n_cells, -1)
    free = rng.permutation(n_cells)
    if cfg.planted is not None:
        guest = cfg.planted[1]
        north = free[cells[free, 1] >= math.ceil(cfg.reveal_fraction * g)]
        take = north[: quota[guest]]
        owner[take] = guest
        free = free[~np.isin(free, take)]
    pos = 0
    for c in range(cfg.n_classes):
        if (owner == c).any():
            continue
        owner[free[pos : pos + quota[c]]] = c
        pos += quota[c]
    cell_w, cell_h = w / g, h / g

    def place(c, count):
        mine = np.flatnonzero(owner == c)
        pick = cells[mine[rng.integers(mine.size, size=count)]]
        xy = (pick + rng.random((count, 2))) * [cell_w, cell_h]
        return xy

    return place


def _voronoi_patches(cfg: SynthConfig, rng: np.random.Generator, sites_per_class: int = 4):
    w, h = cfg.extent
    p = np.asarray(cfg.class_proportions)
    n_sites = max(cfg.n_classes, sites_per_class * cfg.n_classes)
    quota = np.maximum(1, np.round(p * n_sites).astype(int))
    sites = rng.random((quota.sum(), 2)) * [w, h]
    owner = np.repeat(np.arange(cfg.n_classes), quota)
    if cfg.planted is not None:
        guest = cfg.planted[1]
        low = cfg.reveal_fraction * h
        mask = owner == guest
        sites[mask, 1] = low + rng.random(mask.sum()) * (h - low)

    def place(c, count):
        out = np.empty((0, 2))
        while out.shape[0] < count:
            cand = rng.random((max(4 * count, 64), 2)) * [w, h]
            near = np.argmin(((cand[:, None, :] - sites[None]) ** 2).sum(-1), axis=1)
            ok = owner[near] == c
            if cfg.planted is not None and c == cfg.planted[1]:
                ok &= cand[:, 1] >= cfg.reveal_fraction * h
            out = np.vstack([out, cand[ok]])
        return out[:count]

    return place


def class_means(cfg: SynthConfig) -> np.ndarray:
    """The generator's class means for ``cfg`` (same draws as :func:`synth_generate`)."""
    return _class_means(cfg, np.random.default_rng(cfg.seed))


def synth_generate(cfg: SynthConfig) -> list[Observation]:
    """Draw a labelled dataset; labels are multinomial in ``class_proportions``."""
    rng = np.random.default_rng(cfg.seed)
    means = _class_means(cfg, rng)
    labels = rng.choice(cfg.n_classes, size=cfg.n_points, p=np.asarray(cfg.class_proportions))
    place = _grid_patches(cfg, rng) if cfg.patch_layout == "GRID" else _voronoi_patches(cfg, rng)
    xy = np.zeros((cfg.n_points, 2))
    for c in range(cfg.n_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size:
            xy[idx] = place(c, idx.size)
    feats = means[labels] + cfg.feature_noise * rng.standard_normal((cfg.n_points, cfg.d))
    width = len(str(cfg.n_points - 1))
    return [
        Observation(f"s{i:0{width}d}", float(xy[i, 0]), float(xy[i, 1]), int(labels[i]), feats[i])
        for i in range(cfg.n_points)
    ]
