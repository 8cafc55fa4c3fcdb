"""Ground-truth annotation files.

One box per line: ``image_id,x,y,width,height`` with integer coordinates.
Blank lines and lines starting with '#' are ignored. A sixth optional field
is kept as a free-form tag.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .boxes import Rect


@dataclass(frozen=True)
class Annotation:
    image_id: str
    rect: Rect
    tag: str | None = None


def parse_annotation_line(line: str, where: str) -> Annotation:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) not in (5, 6):
        raise ValueError(f"{where}: expected 5 or 6 comma-separated fields, got {len(parts)}")
    image_id = parts[0]
    if not image_id:
        raise ValueError(f"{where}: empty image id")
    try:
        x, y, w, h = (int(p) for p in parts[1:5])
    except ValueError as exc:
        raise ValueError(f"{where}: coordinates must be integers: {exc}") from exc
    if w <= 0 or h <= 0:
        raise ValueError(f"{where}: width/height must be positive, got {w}x{h}")
    tag = parts[5] if len(parts) == 6 else None
    return Annotation(image_id=image_id, rect=Rect(float(x), float(y), float(w), float(h)), tag=tag)


def read_annotations(path: str | Path) -> list[Annotation]:
    out: list[Annotation] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        out.append(parse_annotation_line(stripped, f"{path}:{lineno}"))
    return out


def write_annotations(path: str | Path, annotations: Iterable[Annotation]) -> None:
    lines = []
    for a in annotations:
        fields = [
            a.image_id,
            str(int(a.rect.x)),
            str(int(a.rect.y)),
            str(int(a.rect.w)),
            str(int(a.rect.h)),
        ]
        if a.tag is not None:
            fields.append(a.tag)
        lines.append(",".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
