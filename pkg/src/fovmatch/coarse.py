"""Offline tile dictionary and two-stage coarse localization.

The reference image is split into overlapping tiles on a regular grid;
their PCA scores form a searchable map from template appearance to tile
position. Online, a template is projected and matched to its nearest
tile (global stage), then patch-level PCA voting inside an enlarged
region refines the center estimate (block stage).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyDictionary, OutOfBounds, ReferenceTooSmall
from .image import CropBox, RasterImage, crop, resample, to_vector
from .pca import DEFAULT_BLOCK_ROWS, PcaModel, fit_exact, fit_randomized_blocks

_MAGIC = b"TDIC"
_VERSION = 1


@dataclass(frozen=True)
class TilingSpec:
    tile_width: int
    tile_height: int
    stride: int

    def __post_init__(self):
        if not 1 <= self.stride <= min(self.tile_width, self.tile_height):
            raise ValueError(
                f"stride {self.stride} outside [1, {min(self.tile_width, self.tile_height)}]"
            )


def _grid_origins(ref_w: int, ref_h: int, tiling: TilingSpec) -> tuple[np.ndarray, np.ndarray]:
    xs = np.arange(0, ref_w - tiling.tile_width + 1, tiling.stride)
    ys = np.arange(0, ref_h - tiling.tile_height + 1, tiling.stride)
    return xs, ys


@dataclass(frozen=True)
class PatchConfig:
    """Block-stage parameters; patch size defaults to half the tile side."""

    patch_width: int
    patch_height: int
    stride: int = 5
    components: int = 10
    enlargement: float = 1.5


@dataclass(frozen=True)
class TargetDictionary:
    pca: PcaModel
    boxes: list[CropBox]
    tiling: TilingSpec
    reference_size: tuple[int, int]  # (width, height)
    seed: int = 0
    patch_config: PatchConfig | None = None
    patch_models: list[PcaModel] | None = None  # per-target, when precomputed

    @property
    def n_targets(self) -> int:
        return len(self.boxes)

    def to_bytes(self) -> bytes:
        parts = [_MAGIC, struct.pack("<B", _VERSION)]
        parts.append(struct.pack("<II", *self.reference_size))
        parts.append(
            struct.pack("<III", self.tiling.tile_width, self.tiling.tile_height, self.tiling.stride)
        )
        parts.append(struct.pack("<q", self.seed))
        parts.append(struct.pack("<I", len(self.boxes)))
        box_arr = np.array(
            [(b.center_x, b.center_y, b.width, b.height) for b in self.boxes], dtype="<f8"
        )
        parts.append(box_arr.tobytes())
        pca_blob = self.pca.to_bytes()
        parts.append(struct.pack("<Q", len(pca_blob)))
        parts.append(pca_blob)
        if self.patch_config is None:
            parts.append(struct.pack("<B", 0))
        else:
            pc = self.patch_config
            parts.append(struct.pack("<B", 1))
            parts.append(
                struct.pack("<IIII", pc.patch_width, pc.patch_height, pc.stride, pc.components)
            )
            parts.append(struct.pack("<d", pc.enlargement))
            models = self.patch_models or []
            parts.append(struct.pack("<I", len(models)))
            for m in models:
                blob = m.to_bytes()
                parts.append(struct.pack("<Q", len(blob)))
                parts.append(blob)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "TargetDictionary":
        if blob[:4] != _MAGIC:
            raise ValueError("not a target dictionary blob")
        version = blob[4]
        if version != _VERSION:
            raise ValueError(f"unsupported dictionary version {version}")
        off = 5
        ref_w, ref_h = struct.unpack_from("<II", blob, off)
        off += 8
        tw, th, stride = struct.unpack_from("<III", blob, off)
        off += 12
        (seed,) = struct.unpack_from("<q", blob, off)
        off += 8
        (n,) = struct.unpack_from("<I", blob, off)
        off += 4
        box_arr = np.frombuffer(blob, dtype="<f8", count=n * 4, offset=off).reshape(n, 4)
        off += n * 32
        boxes = [CropBox(cx, cy, int(w), int(h)) for cx, cy, w, h in box_arr]
        (pca_len,) = struct.unpack_from("<Q", blob, off)
        off += 8
        pca = PcaModel.from_bytes(blob[off : off + pca_len])
        off += pca_len
        has_patch = blob[off]
        off += 1
        patch_config = None
        patch_models = None
        if has_patch:
            pw, ph, pstride, pcomp = struct.unpack_from("<IIII", blob, off)
            off += 16
            (enlarge,) = struct.unpack_from("<d", blob, off)
            off += 8
            patch_config = PatchConfig(pw, ph, pstride, pcomp, enlarge)
            (count,) = struct.unpack_from("<I", blob, off)
            off += 4
            patch_models = []
            for _ in range(count):
                (mlen,) = struct.unpack_from("<Q", blob, off)
                off += 8
                patch_models.append(PcaModel.from_bytes(blob[off : off + mlen]))
                off += mlen
        return cls(
            pca=pca,
            boxes=boxes,
            tiling=TilingSpec(tw, th, stride),
            reference_size=(ref_w, ref_h),
            seed=seed,
            patch_config=patch_config,
            patch_models=patch_models,
        )

    def save(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "TargetDictionary":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


@dataclass(frozen=True)
class CoarseLocation:
    center_x: float
    center_y: float
    chosen_target: int
    patch_votes: list[tuple[int, int]] = field(default_factory=list)


def _tile_blocks(reference: RasterImage, origins, tiling: TilingSpec, block_rows: int):
    """Yield row blocks of the vectorized tile matrix without materializing it."""
    px = reference.pixels
    tw, th = tiling.tile_width, tiling.tile_height
    buf = []
    for ty, tx in origins:
        buf.append(px[ty : ty + th, tx : tx + tw].ravel())
        if len(buf) == block_rows:
            yield np.array(buf)
            buf = []
    if buf:
        yield np.array(buf)


def build_dictionary(
    reference: RasterImage,
    tiling: TilingSpec,
    l: int = 20,
    seed: int = 0,
    method: str = "randomized",
    oversample: int = 10,
    power_iters: int = 1,
    patch_config: PatchConfig | None = None,
    precompute_patches: bool = False,
) -> TargetDictionary:
    """Tile the reference on a stride grid and fit the tile PCA.

    `method="exact"` swaps the randomized solver for a full SVD (used by
    the oracle suites). With `precompute_patches`, the block-stage patch
    model of every target's enlarged region is fitted now and stored,
    trading memory for online speed.
    """
    tw, th = tiling.tile_width, tiling.tile_height
    if reference.width < tw or reference.height < th:
        raise ReferenceTooSmall(
            f"reference {reference.width}x{reference.height} smaller than tile {tw}x{th}"
        )
    xs, ys = _grid_origins(reference.width, reference.height, tiling)
    origins = [(ty, tx) for ty in ys for tx in xs]
    n = len(origins)
    d = tw * th
    l = min(l, n, d)

    if method == "exact":
        X = np.concatenate(list(_tile_blocks(reference, origins, tiling, DEFAULT_BLOCK_ROWS)))
        model = fit_exact(X, l)
    elif method == "randomized":
        model = fit_randomized_blocks(
            lambda: _tile_blocks(reference, origins, tiling, DEFAULT_BLOCK_ROWS),
            n, d, l,
            oversample=oversample,
            power_iters=power_iters,
            seed=seed,
        )
    else:
        raise ValueError(f"unknown method {method!r}")

    boxes = [CropBox(tx + tw / 2.0, ty + th / 2.0, tw, th) for ty, tx in origins]
    pc = patch_config
    if pc is None and precompute_patches:
        pc = PatchConfig(patch_width=tw // 2, patch_height=th // 2)
    d = TargetDictionary(
        pca=model,
        boxes=boxes,
        tiling=tiling,
        reference_size=(reference.width, reference.height),
        seed=seed,
        patch_config=pc,
    )
    if precompute_patches:
        models = [
            _fit_region_patches(_enlarged_region(d, reference, i)[0], pc, seed)
            for i in range(n)
        ]
        d = replace(d, patch_models=models)
    return d


def _prepare_template(dictionary: TargetDictionary, template: RasterImage) -> RasterImage:
    tw, th = dictionary.tiling.tile_width, dictionary.tiling.tile_height
    if (template.width, template.height) != (tw, th):
        return resample(template, tw, th)
    return template


def locate_global(dictionary: TargetDictionary, template: RasterImage) -> int:
    """Index of the nearest target tile in PCA score space."""
    if dictionary.n_targets == 0:
        raise EmptyDictionary("dictionary holds no targets")
    t = _prepare_template(dictionary, template)
    z = dictionary.pca.project(to_vector(t))
    return dictionary.pca.nearest(z, k=1)[0][0]


def _clamped_center(ref_w, ref_h, cx, cy, w, h):
    half_w, half_h = w / 2.0, h / 2.0
    return (
        min(max(cx, half_w), ref_w - half_w),
        min(max(cy, half_h), ref_h - half_h),
    )


def _enlarged_region(dictionary: TargetDictionary, reference: RasterImage, target_index: int):
    """Crop the block-stage search region around a target's center."""
    pc = dictionary.patch_config or PatchConfig(
        patch_width=dictionary.tiling.tile_width // 2,
        patch_height=dictionary.tiling.tile_height // 2,
    )
    tw, th = dictionary.tiling.tile_width, dictionary.tiling.tile_height
    rw = min(int(round(pc.enlargement * tw)), reference.width)
    rh = min(int(round(pc.enlargement * th)), reference.height)
    if rw < pc.patch_width or rh < pc.patch_height:
        raise OutOfBounds("enlarged region cannot hold a single patch")
    box = dictionary.boxes[target_index]
    cx, cy = _clamped_center(reference.width, reference.height, box.center_x, box.center_y, rw, rh)
    region_box = CropBox(cx, cy, rw, rh)
    return crop(reference, region_box), region_box


def _patch_grid(width, height, pw, ph, stride):
    xs = np.arange(0, width - pw + 1, stride)
    ys = np.arange(0, height - ph + 1, stride)
    return [(int(y), int(x)) for y in ys for x in xs]


def _patch_matrix(image: RasterImage, offsets, pw, ph) -> np.ndarray:
    px = image.pixels
    return np.array([px[y : y + ph, x : x + pw].ravel() for y, x in offsets])


def _fit_region_patches(region: RasterImage, pc: PatchConfig, seed: int) -> PcaModel:
    offsets = _patch_grid(region.width, region.height, pc.patch_width, pc.patch_height, pc.stride)
    P = _patch_matrix(region, offsets, pc.patch_width, pc.patch_height)
    l = min(pc.components, P.shape[0], P.shape[1])
    return fit_randomized_blocks(lambda: iter((P,)), P.shape[0], P.shape[1], l, seed=seed)


def locate_block(
    dictionary: TargetDictionary,
    reference: RasterImage,
    template: RasterImage,
    coarse_target: int,
    patch_config: PatchConfig | None = None,
    seed: int | None = None,
) -> CoarseLocation:
    """Patch-vote refinement of a global match.

    Every template patch is projected into the patch PCA of the enlarged
    region; the matched region-patch positions, shifted back by each
    patch's offset inside the template, are averaged into the refined
    template-center estimate.
    """
    t = _prepare_template(dictionary, template)
    pc = patch_config or dictionary.patch_config or PatchConfig(
        patch_width=dictionary.tiling.tile_width // 2,
        patch_height=dictionary.tiling.tile_height // 2,
    )
    seed = dictionary.seed if seed is None else seed
    region, region_box = _enlarged_region(dictionary, reference, coarse_target)

    reuse = (
        dictionary.patch_models is not None
        and dictionary.patch_config == pc
        and seed == dictionary.seed
    )
    model = (
        dictionary.patch_models[coarse_target]
        if reuse
        else _fit_region_patches(region, pc, seed)
    )

    region_offsets = _patch_grid(region.width, region.height, pc.patch_width, pc.patch_height, pc.stride)
    tpl_offsets = _patch_grid(t.width, t.height, pc.patch_width, pc.patch_height, pc.stride)
    T = _patch_matrix(t, tpl_offsets, pc.patch_width, pc.patch_height)

    scores = (T - model.column_means) @ model.weights
    votes = []
    centers = []
    for k, (py, px) in enumerate(tpl_offsets):
        idx = model.nearest(scores[k], k=1)[0][0]
        ry, rx = region_offsets[idx]
        votes.append((k, idx))
        # implied template top-left inside the region, shifted to its center
        centers.append((rx - px + t.width / 2.0, ry - py + t.height / 2.0))
    centers = np.array(centers)
    bx = float(centers[:, 0].mean()) + region_box.left
    by = float(centers[:, 1].mean()) + region_box.top
    cx, cy = _clamped_center(reference.width, reference.height, bx, by, t.width, t.height)
    return CoarseLocation(center_x=cx, center_y=cy, chosen_target=coarse_target, patch_votes=votes)


@dataclass(frozen=True)
class CoarseOptions:
    use_block: bool = True
    patch_config: PatchConfig | None = None
    seed: int | None = None


def coarse_localize(
    dictionary: TargetDictionary,
    reference: RasterImage,
    template: RasterImage,
    options: CoarseOptions | None = None,
) -> CoarseLocation:
    """Global nearest-tile lookup, then optional block-stage refinement."""
    opts = options or CoarseOptions()
    idx = locate_global(dictionary, template)
    if not opts.use_block:
        t = _prepare_template(dictionary, template)
        box = dictionary.boxes[idx]
        cx, cy = _clamped_center(
            reference.width, reference.height, box.center_x, box.center_y, t.width, t.height
        )
        return CoarseLocation(center_x=cx, center_y=cy, chosen_target=idx)
    return locate_block(
        dictionary, reference, template, idx, patch_config=opts.patch_config, seed=opts.seed
    )
