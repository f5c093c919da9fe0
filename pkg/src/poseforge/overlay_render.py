"""SVG overlays of person boxes and keypoint markers for spot-checking contexts.

The image is linked by file name, never embedded. Visible keypoints (v=2)
are solid markers, labeled-but-hidden ones (v=1) are hollow, unlabeled ones
are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass
from xml.sax.saxutils import escape, quoteattr

from .coco_ingest import ImageContext
from .symbolic_context import body_part_name


@dataclass(frozen=True)
class OverlayStyle:
    box_stroke_width: float = 2.0
    marker_radius: float = 4.0
    marker_color: str = "#00c853"
    box_color: str = "#ffffff"
    show_labels: bool = False
    font_size: float = 10.0

    def __post_init__(self):
        if self.marker_radius <= 0:
            raise ValueError("marker_radius must be positive")
        if self.box_stroke_width <= 0:
            raise ValueError("box_stroke_width must be positive")


def _num(x: float) -> str:
    s = f"{x:.2f}".rstrip("0").rstrip(".")
    return "0" if s in ("", "-0") else s


def denormalize(x: float, y: float, width: int, height: int) -> tuple[float, float]:
    return x * width, y * height


def render_overlay(ctx: ImageContext, style: OverlayStyle | None = None) -> str:
    style = style or OverlayStyle()
    W, H = ctx.image_meta.width, ctx.image_meta.height
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
        f'width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f"  <image href={quoteattr(ctx.image_meta.file_name)} xlink:href={quoteattr(ctx.image_meta.file_name)} "
        f'x="0" y="0" width="{W}" height="{H}"/>',
    ]
    for p in sorted(ctx.persons, key=lambda p: p.annotation_id):
        x1, y1, x2, y2 = p.bbox_norm
        out.append(f'  <g class="person" id="person-{p.annotation_id}">')
        out.append(
            f'    <rect x="{_num(x1 * W)}" y="{_num(y1 * H)}" width="{_num((x2 - x1) * W)}" '
            f'height="{_num((y2 - y1) * H)}" fill="none" stroke="{style.box_color}" '
            f'stroke-width="{_num(style.box_stroke_width)}"/>'
        )
        for i, (x, y, v) in enumerate(p.keypoints_norm, 1):
            if v == 0:
                continue
            cx, cy = denormalize(x, y, W, H)
            fill = style.marker_color if v == 2 else "none"
            out.append(
                f'    <circle cx="{_num(cx)}" cy="{_num(cy)}" r="{_num(style.marker_radius)}" '
                f'fill="{fill}" stroke="{style.marker_color}" stroke-width="1"/>'
            )
            if style.show_labels:
                out.append(
                    f'    <text x="{_num(cx + style.marker_radius + 1)}" y="{_num(cy)}" '
                    f'font-size="{_num(style.font_size)}" fill="{style.marker_color}">'
                    f"{escape(body_part_name(i))}</text>"
                )
        out.append("  </g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
