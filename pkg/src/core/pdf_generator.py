"""PDF report export for matting evaluations"""

import io
import logging
import os
from typing import Optional, Sequence

import numpy as np
from PIL import Image as PILImage
from reportlab.lib import colors
from reportlab.lib.enums import TA_CENTER, TA_LEFT
from reportlab.lib.pagesizes import A4
from reportlab.lib.styles import getSampleStyleSheet, ParagraphStyle
from reportlab.lib.units import mm
from reportlab.platypus import SimpleDocTemplate, Paragraph, Spacer, Table, TableStyle, Image

from .metrics import MetricsReport, as_alpha_stack
from .version_manager import VersionManager

logger = logging.getLogger(__name__)

THUMB_WIDTH = 40 * mm


class MetricsPDFGenerator:
    """Generate PDF reports for matting evaluations"""

    def __init__(self, max_thumbnails: int = 4):
        self.max_thumbnails = max_thumbnails
        self.styles = getSampleStyleSheet()
        self.setup_custom_styles()

    def setup_custom_styles(self):
        """Setup custom paragraph styles"""
        # Title style
        self.styles.add(ParagraphStyle(
            'CustomTitle',
            parent=self.styles['Heading1'],
            fontSize=18,
            spaceAfter=20,
            alignment=TA_CENTER,
            textColor=colors.black
        ))

        # Section header
        self.styles.add(ParagraphStyle(
            'SectionHeader',
            parent=self.styles['Heading2'],
            fontSize=14,
            spaceBefore=16,
            spaceAfter=8,
            alignment=TA_LEFT,
            textColor=colors.black
        ))

    @staticmethod
    def _table_style() -> TableStyle:
        return TableStyle([
            ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
            ('FONTSIZE', (0, 0), (-1, -1), 9),
            ('BACKGROUND', (0, 0), (-1, 0), colors.lightgrey),
            ('GRID', (0, 0), (-1, -1), 0.5, colors.grey),
            ('ALIGN', (1, 0), (-1, -1), 'RIGHT'),
            ('TOPPADDING', (0, 0), (-1, -1), 4),
            ('BOTTOMPADDING', (0, 0), (-1, -1), 4),
        ])

    @staticmethod
    def alpha_thumbnail(plane: np.ndarray, width: float = THUMB_WIDTH) -> Image:
        """Grayscale PNG flowable of one alpha plane"""
        pixels = np.floor(np.clip(plane, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
        buffer = io.BytesIO()
        PILImage.fromarray(pixels).save(buffer, format="PNG")
        buffer.seek(0)
        h, w = plane.shape
        return Image(buffer, width=width, height=width * h / w)

    @staticmethod
    def _fmt(value: Optional[float]) -> str:
        return "n/a" if value is None else f"{value:.4f}"

    def generate_metrics_pdf(self, report: MetricsReport, out_path: str, title: str = "Matting evaluation",
                             pred: Optional[Sequence] = None, gt: Optional[Sequence] = None) -> str:
        """Summary table, per-frame table and prediction/ground-truth thumbnails"""
        directory = os.path.dirname(out_path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        doc = SimpleDocTemplate(out_path, pagesize=A4, leftMargin=20 * mm, rightMargin=20 * mm,
                                topMargin=20 * mm, bottomMargin=25 * mm)
        story = [Paragraph(title, self.styles['CustomTitle'])]

        story.append(Paragraph("Summary", self.styles['SectionHeader']))
        summary = report.summary()
        rows = [["Metric", "Value"]] + [[name.upper() if name != "dtssd" else "dtSSD", self._fmt(value)]
                                        for name, value in summary.items()]
        table = Table(rows, colWidths=[50 * mm, 40 * mm])
        table.setStyle(self._table_style())
        story.append(table)

        story.append(Paragraph("Per frame", self.styles['SectionHeader']))
        rows = [["Frame", "MAD", "MSE", "Grad", "Conn", "dt"]]
        for row in report.per_frame:
            rows.append([str(row["frame"])] + [self._fmt(row[k]) for k in ("mad", "mse", "grad", "conn", "dt_term")])
        table = Table(rows, repeatRows=1)
        table.setStyle(self._table_style())
        story.append(table)

        if pred is not None and gt is not None:
            story.append(Paragraph("Alpha mattes (prediction | ground truth)", self.styles['SectionHeader']))
            p, g = as_alpha_stack(pred), as_alpha_stack(gt)
            count = min(len(p), self.max_thumbnails)
            picks = sorted({int(round(i * (len(p) - 1) / max(count - 1, 1))) for i in range(count)})
            rows = [[f"Frame {t + 1}", self.alpha_thumbnail(p[t]), self.alpha_thumbnail(g[t])] for t in picks]
            table = Table(rows)
            table.setStyle(TableStyle([('VALIGN', (0, 0), (-1, -1), 'MIDDLE')]))
            story.append(table)
            story.append(Spacer(1, 10))

        version = VersionManager().get_current_version()

        def add_footer(canvas, doc):
            canvas.saveState()
            canvas.setFont('Helvetica', 9)
            canvas.setFillColor(colors.grey)
            canvas.drawCentredString(doc.width / 2 + doc.leftMargin, 15 * mm,
                                     f"Generated by MatteBuddy {version} | Page {doc.page}")
            canvas.restoreState()

        doc.build(story, onFirstPage=add_footer, onLaterPages=add_footer)
        logger.info("Wrote PDF report to %s", out_path)
        return out_path
