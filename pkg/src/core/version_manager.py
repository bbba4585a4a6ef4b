"""
Version stamp for reports and the command line
"""

import json
import logging
import os
import sys
from typing import Dict

logger = logging.getLogger(__name__)


class VersionManager:
    """Reads version.json from the project root (or a frozen bundle)"""

    def __init__(self, version_file: str = None):
        self.version_file = version_file or self.get_version_file_path()
        self.current_version = self.load_version()

    @staticmethod
    def get_version_file_path() -> str:
        """Path to version.json, handling PyInstaller bundles"""
        if getattr(sys, "frozen", False):
            return os.path.join(sys._MEIPASS, "version.json")
        project_root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
        return os.path.join(project_root, "version.json")

    def load_version(self) -> str:
        """Version string, '0.0' when the stamp is missing or unreadable"""
        return self.get_version_info().get("version", "0.0")

    def get_version_info(self) -> Dict:
        if os.path.exists(self.version_file):
            try:
                with open(self.version_file, "r", encoding="utf-8") as f:
                    return json.load(f)
            except (OSError, ValueError) as e:
                logger.warning("Could not read %s: %s", self.version_file, e)
        return {"version": "0.0", "build_number": 0}

    def get_current_version(self) -> str:
        return self.current_version
