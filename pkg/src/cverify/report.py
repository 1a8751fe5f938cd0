"""Result emission: result.json, result.csv and the 2-D partition map.

All floats are printed with 17 significant digits through one formatting
path, so a given PartitionResult serializes to byte-identical files on
every platform and worker count.
"""

from __future__ import annotations

import math
import os

from .conformal import SAFE, UNSAFE, UNKNOWN
from .partition import PartitionResult
from .signals import ParamBox

SVG_COLORS = {
    SAFE: "#2e7d32",
    UNSAFE: "#c62828",
    UNKNOWN: "#9e9e9e",
    "Failed": "#ef6c00",
}


def fmt_float(v) -> str:
    """17-significant-digit decimal, the one float spelling used in output."""
    v = float(v)
    if math.isnan(v) or math.isinf(v):
        return "null"
    s = format(v, ".17g")
    # normalize the exponent spelling ("1e+05" etc. is already stable in
    # CPython; just guard against "-0")
    return "0" if s == "-0" else s


def _jlist(values) -> str:
    return "[" + ", ".join(fmt_float(v) for v in values) + "]"


def _region_json(lr) -> str:
    box = lr.region.box
    parts = [
        f'"id": "{lr.region.id}"',
        '"box": ['
        + ", ".join(_jlist([lo, hi]) for lo, hi in zip(box.lower, box.upper))
        + "]",
        f'"verdict": "{lr.verdict}"',
    ]
    if lr.interval is None:
        parts.append('"interval": null')
    else:
        parts.append(f'"interval": {_jlist([lr.interval.lo, lr.interval.hi])}')
    parts.append(f'"sims_used": {lr.sims_used}')
    if lr.counterexample is not None:
        parts.append(f'"counterexample": {_jlist(lr.counterexample)}')
    return "{" + ", ".join(parts) + "}"


def render_result_json(result: PartitionResult) -> str:
    lines = ['{', '  "regions": [']
    body = ",\n".join("    " + _region_json(lr) for lr in result.regions)
    if body:
        lines.append(body)
    lines.append("  ],")
    lines.append(f'  "alpha": {fmt_float(result.alpha)},')
    lines.append(f'  "seed": {result.seed},')
    lines.append(f'  "strategy": "{result.strategy}",')
    lines.append(f'  "total_sims": {result.total_sims},')
    lines.append(f'  "exhausted": {"true" if result.exhausted else "false"}')
    lines.append("}")
    return "\n".join(lines) + "\n"


def render_result_csv(result: PartitionResult) -> str:
    if result.regions:
        k = result.regions[0].region.box.dim
    else:
        k = 0
    header = ["id", "verdict"]
    for axis in range(k):
        header += [f"lo{axis}", f"hi{axis}"]
    header += ["interval_lo", "interval_hi", "sims_used", "counterexample"]
    rows = [",".join(header)]
    for lr in result.regions:
        box = lr.region.box
        row = [lr.region.id, lr.verdict]
        for axis in range(k):
            row += [fmt_float(box.lower[axis]), fmt_float(box.upper[axis])]
        if lr.interval is None:
            row += ["", ""]
        else:
            row += [fmt_float(lr.interval.lo), fmt_float(lr.interval.hi)]
        row.append(str(lr.sims_used))
        if lr.counterexample is None:
            row.append("")
        else:
            row.append(";".join(fmt_float(v) for v in lr.counterexample))
        rows.append(",".join(row))
    return "\n".join(rows) + "\n"


def render_partition_svg(result: PartitionResult, root_box: ParamBox,
                         width: int = 640) -> str:
    """Rectangle map of a 2-D partition: green Safe, red Unsafe, gray Unknown."""
    if root_box.dim != 2:
        raise ValueError("svg map is only defined for 2-D parameter boxes")
    w0, w1 = float(root_box.widths[0]), float(root_box.widths[1])
    height = int(round(width * w1 / w0))
    sx = width / w0
    sy = height / w1
    x0 = float(root_box.lower[0])
    y1 = float(root_box.upper[1])

    rects = []
    for lr in result.regions:
        box = lr.region.box
        px = (float(box.lower[0]) - x0) * sx
        py = (y1 - float(box.upper[1])) * sy  # svg y grows downward
        pw = float(box.widths[0]) * sx
        ph = float(box.widths[1]) * sy
        color = SVG_COLORS.get(lr.verdict, "#000000")
        rects.append(
            f'<rect x="{px:.3f}" y="{py:.3f}" width="{pw:.3f}" height="{ph:.3f}" '
            f'fill="{color}" stroke="#ffffff" stroke-width="0.6">'
            f"<title>{lr.region.id}: {lr.verdict}</title></rect>"
        )
    body = "\n".join(rects)
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">\n{body}\n</svg>\n'
    )


def write_outputs(result: PartitionResult, root_box: ParamBox, out_dir: str) -> list:
    """Write result.json + result.csv (+ partition.svg when 2-D); return paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    json_path = os.path.join(out_dir, "result.json")
    with open(json_path, "w", newline="\n") as fh:
        fh.write(render_result_json(result))
    paths.append(json_path)

    csv_path = os.path.join(out_dir, "result.csv")
    with open(csv_path, "w", newline="\n") as fh:
        fh.write(render_result_csv(result))
    paths.append(csv_path)

    if root_box.dim == 2:
        svg_path = os.path.join(out_dir, "partition.svg")
        with open(svg_path, "w", newline="\n") as fh:
            fh.write(render_partition_svg(result, root_box))
        paths.append(svg_path)
    return paths