"""Evaluation report rendering (CSV and aligned text).

The header cites the architecture's published full-scale ISIC2018
numbers for orientation; desk-scale runs are not expected to and do
not reproduce them.
"""

REFERENCE_FULL_SCALE = {"dice": 0.9116, "iou": 0.8397, "hd95": 1.7637}

_REF_LINE = "# reference full-scale ISIC2018: dice=%.4f iou=%.4f hd95=%.4f" % (
    REFERENCE_FULL_SCALE["dice"],
    REFERENCE_FULL_SCALE["iou"],
    REFERENCE_FULL_SCALE["hd95"],
)


def _fmt(x):
    return "%.6f" % x


def report_csv(report):
    """Fixed column order: id,dice,iou,hd95,hd95_defined; mean row last."""
    lines = [
        "# richunet evaluation report",
        _REF_LINE,
        "id,dice,iou,hd95,hd95_defined",
    ]
    for r in report.rows:
        hd = _fmt(r.hd95) if r.hd95_defined else "nan"
        lines.append(f"{r.id},{_fmt(r.dice)},{_fmt(r.iou)},{hd},{int(r.hd95_defined)}")
    mean_hd = _fmt(report.mean_hd95) if report.hd95_defined_count else "nan"
    lines.append(
        f"mean,{_fmt(report.mean_dice)},{_fmt(report.mean_iou)},{mean_hd},"
        f"{report.hd95_defined_count}"
    )
    return "\n".join(lines) + "\n"


def report_text(report):
    rows = [("id", "dice", "iou", "hd95")]
    for r in report.rows:
        rows.append((r.id, _fmt(r.dice), _fmt(r.iou),
                     _fmt(r.hd95) if r.hd95_defined else "undefined"))
    mean_hd = _fmt(report.mean_hd95) if report.hd95_defined_count else "undefined"
    rows.append(("mean", _fmt(report.mean_dice), _fmt(report.mean_iou), mean_hd))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    out = [_REF_LINE.lstrip("# ")]
    for j, row in enumerate(rows):
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
        if j == 0:
            out.append("  ".join("-" * widths[i] for i in range(4)))
    undef = len(report.rows) - report.hd95_defined_count
    if undef:
        out.append(f"hd95 undefined for {undef} of {len(report.rows)} samples "
                   "(empty prediction or ground truth); excluded from the mean")
    return "\n".join(out) + "\n"
