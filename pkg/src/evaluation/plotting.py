"""
Acc@θ curves drawn with reportlab graphics and written as PDF or SVG.
"""
import math
from pathlib import Path
from typing import Sequence, Union

from reportlab.graphics import renderPDF, renderSVG
from reportlab.graphics.charts.legends import Legend
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing, String
from reportlab.lib import colors

from src.core.exceptions import ValidationError
from src.evaluation.metrics import MetricsReport
from src.utils.helpers import atomic_write_bytes
from src.utils.logger import get_logger

logger = get_logger(__name__)

PALETTE = [
    colors.HexColor("#1f77b4"),
    colors.HexColor("#d62728"),
    colors.HexColor("#2ca02c"),
    colors.HexColor("#ff7f0e"),
    colors.HexColor("#9467bd"),
    colors.HexColor("#8c564b"),
    colors.HexColor("#e377c2"),
    colors.HexColor("#7f7f7f"),
]

WIDTH, HEIGHT = 480, 320


def acc_theta_drawing(reports: Sequence[MetricsReport], title: str = "Acc@theta") -> Drawing:
    """Accuracy against log10 θ (hours), one line per report with a curve."""
    curves = [r for r in reports if r.acc_at_theta]
    if not curves:
        raise ValidationError("none of the reports has an Acc@theta curve")

    drawing = Drawing(WIDTH, HEIGHT)
    plot = LinePlot()
    plot.x, plot.y = 50, 50
    plot.width, plot.height = WIDTH - 170, HEIGHT - 90
    plot.data = [[(math.log10(t), acc) for t, acc in r.acc_at_theta] for r in curves]
    for i in range(len(curves)):
        plot.lines[i].strokeColor = PALETTE[i % len(PALETTE)]
        plot.lines[i].strokeWidth = 1.5
    plot.yValueAxis.valueMin = 0.0
    plot.yValueAxis.valueMax = 1.0
    plot.yValueAxis.valueStep = 0.2
    lo = math.floor(min(x for line in plot.data for x, _ in line))
    hi = max(math.ceil(max(x for line in plot.data for x, _ in line)), lo + 1)
    plot.xValueAxis.valueMin = lo
    plot.xValueAxis.valueMax = hi
    plot.xValueAxis.valueSteps = list(range(lo, hi + 1))
    plot.xValueAxis.labelTextFormat = lambda v: f"{10 ** v:g}"
    drawing.add(plot)

    legend = Legend()
    legend.x, legend.y = WIDTH - 110, HEIGHT - 50
    legend.fontSize = 8
    legend.alignment = "right"
    legend.colorNamePairs = [
        (PALETTE[i % len(PALETTE)], f"{r.model} {r.label}".strip()) for i, r in enumerate(curves)
    ]
    drawing.add(legend)

    drawing.add(String(WIDTH / 2, HEIGHT - 20, title, textAnchor="middle", fontSize=12))
    drawing.add(String(50 + plot.width / 2, 15, "theta (hours, log scale)", textAnchor="middle", fontSize=9))
    return drawing


def write_plot(reports: Sequence[MetricsReport], out_path: Union[str, Path], title: str = "Acc@theta") -> Path:
    out_path = Path(out_path)
    drawing = acc_theta_drawing(reports, title)
    suffix = out_path.suffix.lower()
    if suffix == ".pdf":
        data = renderPDF.drawToString(drawing)
    elif suffix == ".svg":
        data = renderSVG.drawToString(drawing)
    else:
        raise ValidationError(f"plot file must end in .pdf or .svg: {out_path}")
    if isinstance(data, str):
        data = data.encode("utf-8")
    atomic_write_bytes(out_path, data)
    logger.info(f"Wrote Acc@theta plot with {len(reports)} report(s) to {out_path}")
    return out_path
