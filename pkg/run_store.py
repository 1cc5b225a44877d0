import os
from typing import Dict, Iterable, List, Optional

import pandas as pd

from config import Config, log
from wavelab import DiagnosticsSeries, OutcomeRecord

FLOAT_FORMAT = "%.17g"


class RunStore:
    """One output folder per invocation: manifest, CSV tables and the outcome summary"""

    def __init__(self, out_dir: Optional[str] = None, cleanup: bool = True):
        """
        Prepare the output folder

        Args:
            out_dir: explicit folder (--out); defaults to <BASE_OUTPUT_DIR>/run_<RUN_ID>
            cleanup: apply the retention policy to older run folders first
        """
        self.path = out_dir or Config.RUN_PATH
        self.written: List[str] = []

        # Old runs are only pruned when writing into the managed base folder
        if cleanup and out_dir is None and Config.CLEANUP_ENABLED:
            from run_cleanup import RunCleanupManager
            manager = RunCleanupManager(Config.BASE_OUTPUT_DIR, Config.RUN_ID)
            result = manager.cleanup_old_runs()
            if result['deleted_count'] > 0:
                log(f"🧹 Cleaned up {result['deleted_count']} old run(s) "
                    f"({result['space_freed_human']} freed)")

        self.ensure_path_exists()

    def ensure_path_exists(self):
        os.makedirs(self.path, exist_ok=True)
        if not os.access(self.path, os.W_OK):
            raise PermissionError(f"🚫 Path not writable: {self.path}")
        log(f"📁 Output directory ready: {self.path}")

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    def write_manifest(self, resolved: Dict[str, str], command: str) -> str:
        """Echo the fully resolved configuration, one key = value line per key, sorted."""
        lines = [f"command = {command}"]
        lines += [f"{key} = {resolved[key]}" for key in sorted(resolved)]
        return self._write_text("manifest.txt", lines)

    def write_table(self, name: str, frame: pd.DataFrame) -> str:
        path = self.file(name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        self.written.append(path)
        return path

    def write_series(self, series: DiagnosticsSeries) -> List[str]:
        return [self.write_table("diagnostics.csv", series.to_frame()),
                self.write_table("events.csv", series.events_frame())]

    def write_snapshots(self, snapshots: Iterable[pd.DataFrame], prefix: str = "snapshot") -> List[str]:
        """Each frame carries its time in a leading t column; files are numbered in order."""
        return [self.write_table(f"{prefix}_{i:04d}.csv", frame) for i, frame in enumerate(snapshots)]

    def write_outcome(self, outcome: OutcomeRecord) -> str:
        return self._write_text("outcome.txt", outcome.summary_lines())

    def write_report(self, name: str, lines: List[str]) -> str:
        return self._write_text(name, lines)

    def _write_text(self, name: str, lines: List[str]) -> str:
        path = self.file(name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
        self.written.append(path)
        return path

    def summary(self) -> Dict[str, object]:
        return {
            'path': self.path,
            'files': [os.path.basename(p) for p in self.written],
        }
