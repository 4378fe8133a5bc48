"""End-to-end template matching: coarse localization, region extraction,
MI refinement, and composition of the template-to-reference transform.

All analytic failures fold into the result status so batch harnesses
keep running; only programming errors propagate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coarse import CoarseLocation, CoarseOptions, TargetDictionary, coarse_localize
from .errors import FovMatchError, NotMatched
from .image import AffineTransform, CropBox, RasterImage, crop
from .mi import RegistrationSettings, register

STATUS_MATCHED = "matched"
STATUS_LOW_CONFIDENCE = "low-confidence"
STATUS_FAILED = "failed"


@dataclass(frozen=True)
class MatchSettings:
    region_scale: float = 1.5
    mi_floor: float = 0.15
    coarse: CoarseOptions = field(default_factory=CoarseOptions)
    registration: RegistrationSettings = field(default_factory=RegistrationSettings)


@dataclass(frozen=True)
class MatchResult:
    coarse: CoarseLocation | None
    region_box: CropBox | None
    local_transform: AffineTransform | None   # template -> region coords
    global_transform: AffineTransform | None  # template -> reference coords
    final_mi: float
    status: str
    reason: str = ""

    def to_record(self, template_id: str) -> str:
        g = self.global_transform
        params = g.as_params() if g is not None else [float("nan")] * 6
        cx = self.coarse.center_x if self.coarse else float("nan")
        cy = self.coarse.center_y if self.coarse else float("nan")
        fields = [template_id, self.status]
        fields += [f"{v:.10g}" for v in params]
        fields += [f"{self.final_mi:.10g}", f"{cx:.10g}", f"{cy:.10g}", self.reason]
        return ",".join(fields)

    @staticmethod
    def record_header() -> str:
        return "template_id,status,a11,a12,a21,a22,tx,ty,mi,coarse_x,coarse_y,reason"


def match(
    dictionary: TargetDictionary,
    reference: RasterImage,
    template: RasterImage,
    settings: MatchSettings | None = None,
) -> MatchResult:
    """Locate `template` inside `reference` and refine with MI registration."""
    cfg = settings or MatchSettings()
    coarse = None
    region_box = None
    try:
        coarse = coarse_localize(dictionary, reference, template, cfg.coarse)
        rw = min(int(round(cfg.region_scale * template.width)), reference.width)
        rh = min(int(round(cfg.region_scale * template.height)), reference.height)
        half_w, half_h = rw / 2.0, rh / 2.0
        cx = min(max(coarse.center_x, half_w), reference.width - half_w)
        cy = min(max(coarse.center_y, half_h), reference.height - half_h)
        region_box = CropBox(cx, cy, rw, rh)
        region = crop(reference, region_box)

        # identity linear part, template centered where coarse placed it
        init = AffineTransform.translation(
            (template.width - rw) / 2.0, (template.height - rh) / 2.0
        )
        result = register(template, region, init, cfg.registration)
        local = result.transform.invert()  # template -> region
        global_t = AffineTransform.translation(region_box.left, region_box.top).compose(local)
        status = STATUS_MATCHED if result.final_mi >= cfg.mi_floor else STATUS_LOW_CONFIDENCE
        return MatchResult(
            coarse=coarse,
            region_box=region_box,
            local_transform=local,
            global_transform=global_t,
            final_mi=result.final_mi,
            status=status,
        )
    except FovMatchError as exc:
        return MatchResult(
            coarse=coarse,
            region_box=region_box,
            local_transform=None,
            global_transform=None,
            final_mi=float("nan"),
            status=STATUS_FAILED,
            reason=type(exc).__name__,
        )


def apply_match(result: MatchResult, points) -> np.ndarray:
    """Map template coordinates into reference coordinates."""
    if result.status != STATUS_MATCHED or result.global_transform is None:
        raise NotMatched(f"status is {result.status!r}")
    return result.global_transform.apply(points)
