"""Dataset manifests and evaluation reports.

A manifest is a tab-separated text file, one record per line:

    <fog path>\t<clear path or ->\t<paired|unpaired>\t<depth path or ->

Paths are relative to the manifest's directory; '#' starts a comment line.
Paired records must name an existing clear file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


@dataclass
class ManifestRecord:
    fog: Path
    clear: Path | None
    kind: str            # "paired" | "unpaired"
    depth: Path | None


def read_manifest(path, validate: bool = True) -> list[ManifestRecord]:
    path = Path(path)
    base = path.parent
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        fog, clear, kind, depth = parts
        if kind not in ("paired", "unpaired"):
            raise ValueError(f"{path}:{lineno}: kind must be paired|unpaired, got {kind!r}")
        if kind == "paired" and clear == "-":
            raise ValueError(f"{path}:{lineno}: paired record without a clear path")
        rec = ManifestRecord(
            fog=base / fog,
            clear=None if clear == "-" else base / clear,
            kind=kind,
            depth=None if depth == "-" else base / depth,
        )
        if validate:
            if not rec.fog.exists():
                raise FileNotFoundError(f"{path}:{lineno}: missing fog image {rec.fog}")
            if rec.clear is not None and not rec.clear.exists():
                raise FileNotFoundError(f"{path}:{lineno}: missing clear image {rec.clear}")
        records.append(rec)
    return records


def write_manifest(path, records: list[ManifestRecord]) -> None:
    path = Path(path)
    base = path.parent

    def rel(p):
        return "-" if p is None else Path(p).relative_to(base).as_posix()

    lines = [f"{rel(r.fog)}\t{rel(r.clear)}\t{r.kind}\t{rel(r.depth)}" for r in records]
    path.write_text("\n".join(lines) + "\n")


def write_report(path, rows: list[tuple[str, float, float]]) -> None:
    """Per-image PSNR/SSIM table with a trailing mean row."""
    lines = ["image\tpsnr\tssim"]
    for name, p, s in rows:
        lines.append(f"{name}\t{p!r}\t{s!r}")
    if rows:
        mp = sum(r[1] for r in rows) / len(rows)
        ms = sum(r[2] for r in rows) / len(rows)
        lines.append(f"mean\t{mp!r}\t{ms!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> tuple[list[tuple[str, float, float]], tuple[float, float] | None]:
    rows = []
    mean = None
    for line in Path(path).read_text().splitlines()[1:]:
        name, p, s = line.split("\t")
        if name == "mean":
            mean = (float(p), float(s))
        else:
            rows.append((name, float(p), float(s)))
    return rows, mean
