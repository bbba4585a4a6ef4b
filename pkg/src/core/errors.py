"""
Error types raised by the matting engine
"""

from typing import Optional


class MatteBuddyError(Exception):
    """Base class for all MatteBuddy errors"""


class DimensionError(MatteBuddyError, ValueError):
    """Tensor shapes do not line up"""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = [tuple(s) for s in shapes]


class ConfigError(MatteBuddyError, ValueError):
    """Invalid configuration value"""


class ArgumentError(MatteBuddyError, ValueError):
    """Invalid argument to an operation"""


class MaskedRowError(MatteBuddyError, ValueError):
    """Attention row is masked out entirely and no fallback was requested"""


class CapacityError(MatteBuddyError, ValueError):
    """More ground-truth objects than available queries"""


class StateError(MatteBuddyError, RuntimeError):
    """Operation called in the wrong pipeline state"""


class UsageError(MatteBuddyError, RuntimeError):
    """Required input missing for the requested run"""


class ParseError(MatteBuddyError, ValueError):
    """Malformed file content"""

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        where = f"{path}: " if path else ""
        super().__init__(f"{where}{message} (byte offset {offset})")
        self.offset = offset
        self.path = path


class PipelineIOError(MatteBuddyError, OSError):
    """Reading or writing a sequence artifact failed"""

    def __init__(self, message: str, path: str, frame_index: Optional[int] = None):
        frame = f" [frame {frame_index}]" if frame_index is not None else ""
        super().__init__(f"{message}: {path}{frame}")
        self.message = message
        self.path = path
        self.frame_index = frame_index
