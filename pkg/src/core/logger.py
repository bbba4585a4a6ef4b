"""
Run activity logging
"""
import logging
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)


class RunLogger:
    """Keeps an ordered activity log for one sequence run and mirrors it to `logging`.

    Records carry no timestamps so diagnostics built from them are reproducible.
    """

    def __init__(self, run_name: str = "run", sink: Optional[logging.Logger] = None):
        self.run_name = run_name
        self.sink = sink or logger
        self.records: List[Dict[str, Any]] = []

    def log_activity(self, activity_type: str, details: str = None, level: int = logging.INFO, **fields):
        """Record one activity and emit it"""
        record = {"type": activity_type}
        if details is not None:
            record["details"] = details
        record.update(fields)
        self.records.append(record)
        self.sink.log(level, "[%s] %s %s", self.run_name, activity_type, details or "")

    def log_frame(self, frame_index: int, alpha_mean: float, mask_pixels: int):
        """Log a finished frame"""
        self.log_activity("FRAME_INFERRED", f"frame {frame_index}: mean alpha {alpha_mean:.4f}, "
                          f"mask pixels {mask_pixels}", level=logging.DEBUG,
                          frame=frame_index, alpha_mean=alpha_mean, mask_pixels=mask_pixels)

    def log_guidance(self, frame_index: int, support: int, total: int):
        """Log the cross-frame guidance coverage"""
        fallback = support == 0
        self.log_activity("GUIDANCE", f"frame {frame_index}: support {support}/{total}"
                          + (" (empty, unmasked fallback)" if fallback else ""),
                          level=logging.WARNING if fallback else logging.DEBUG,
                          frame=frame_index, support=support, total=total)

    def log_padding(self, frame_index: int, original: tuple, padded: tuple):
        """Log reflect padding of a frame whose size is not a multiple of 16"""
        self.log_activity("PADDED", f"frame {frame_index}: {original[0]}x{original[1]} -> "
                          f"{padded[0]}x{padded[1]}", level=logging.WARNING,
                          frame=frame_index, original=list(original), padded=list(padded))

    def log_metrics(self, summary: Dict[str, Optional[float]]):
        """Log a metrics summary"""
        self.log_activity("METRICS", ", ".join(f"{k}={v}" for k, v in summary.items()), **summary)

    def log_output_written(self, kind: str, count: int, directory: str):
        """Log files written by the run"""
        self.log_activity("OUTPUT_WRITTEN", f"{count} {kind} file(s) in {directory}",
                          kind=kind, count=count)

    def activities(self, activity_type: str) -> List[Dict[str, Any]]:
        return [r for r in self.records if r["type"] == activity_type]


def configure_logging(verbose: bool = False, debug_mode: bool = False):
    """Root logger setup for the command line"""
    level = logging.DEBUG if (verbose or debug_mode) else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", force=True)
