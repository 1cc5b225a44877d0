import os
import shutil
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Dict, List, Optional, Set

from config import Config, log

RUN_PREFIX = "run_"
RUN_ID_FORMAT = "%Y%m%d_%H%M%S"
RETENTION_MODES = ("days", "count", "hybrid")


@dataclass
class RunFolder:
    path: str
    run_id: str
    created: datetime
    age_days: float
    is_current: bool
    size_bytes: int = 0


def folder_size(path: str) -> int:
    """Bytes of all regular files below `path`; symlinks and vanished files count zero."""
    size = 0
    for root, _, names in os.walk(path):
        for name in names:
            full = os.path.join(root, name)
            if not os.path.islink(full):
                try:
                    size += os.path.getsize(full)
                except OSError:
                    pass
    return size


def human_size(n_bytes: float) -> str:
    units = ("B", "KB", "MB", "GB", "TB")
    for unit in units:
        if n_bytes < 1024.0 or unit == units[-1]:
            return f"{n_bytes:.1f} {unit}"
        n_bytes /= 1024.0


def _empty_result() -> Dict[str, Any]:
    return {'deleted_count': 0, 'space_freed_bytes': 0, 'space_freed_human': human_size(0),
            'errors': [], 'deleted_runs': []}


class RunCleanupManager:
    """Retention policy for the run_<RUN_ID> folders under the output base directory"""

    def __init__(self, base_dir: str, current_run_id: str, retention_mode: Optional[str] = None,
                 retention_days: Optional[float] = None, retention_count: Optional[int] = None,
                 now: Optional[datetime] = None):
        """
        Args:
            base_dir: folder holding the run_* folders
            current_run_id: run that is never deleted
            retention_mode, retention_days, retention_count: override the Config policy
            now: reference time for ages (pinned by tests)
        """
        self.base_dir = base_dir
        self.current_run_id = current_run_id
        self.mode = retention_mode or Config.CLEANUP_RETENTION_MODE
        if self.mode not in RETENTION_MODES:
            raise ValueError(f"unknown retention mode '{self.mode}', expected one of {RETENTION_MODES}")
        self.days = Config.CLEANUP_RETENTION_DAYS if retention_days is None else retention_days
        self.count = Config.CLEANUP_RETENTION_COUNT if retention_count is None else retention_count
        self.now = now

    def list_runs(self) -> List[RunFolder]:
        """Folders named run_YYYYMMDD_HHMMSS, newest first; anything else is ignored."""
        if not os.path.isdir(self.base_dir):
            return []
        now = self.now or datetime.now()
        runs = []
        for name in os.listdir(self.base_dir):
            path = os.path.join(self.base_dir, name)
            if not (name.startswith(RUN_PREFIX) and os.path.isdir(path)):
                continue
            run_id = name[len(RUN_PREFIX):]
            try:
                created = datetime.strptime(run_id, RUN_ID_FORMAT)
            except ValueError:
                continue
            runs.append(RunFolder(path, run_id, created, (now - created).total_seconds() / 86400.0,
                                  run_id == self.current_run_id))
        return sorted(runs, key=lambda run: run.created, reverse=True)

    def _ranked_keep(self, runs: List[RunFolder]) -> Set[str]:
        return {run.run_id for run in runs[:self.count]}

    def expired(self, run: RunFolder, ranked_keep: Set[str], delete_all: bool = False) -> bool:
        """Hybrid deletes only runs that are both too old and outside the newest `count`."""
        if run.is_current:
            return False
        if delete_all:
            return True
        too_old = run.age_days > self.days
        outranked = run.run_id not in ranked_keep
        return {"days": too_old, "count": outranked, "hybrid": too_old and outranked}[self.mode]

    def cleanup_old_runs(self, dry_run: bool = False, delete_all: bool = False) -> Dict[str, Any]:
        """
        Apply the policy (or delete every run but the current one).

        Returns a dict with deleted_count, space_freed_bytes, space_freed_human,
        errors and deleted_runs; with dry_run nothing is removed.
        """
        runs = self.list_runs()
        keep = self._ranked_keep(runs)
        result = _empty_result()
        for run in filter(lambda r: self.expired(r, keep, delete_all), runs):
            size = folder_size(run.path)
            if not dry_run:
                try:
                    shutil.rmtree(run.path)
                except OSError as e:
                    result['errors'].append({'run_id': run.run_id, 'error': str(e)})
                    print(f"   ⚠️ Failed to delete {run.run_id}: {e}")
                    continue
                log(f"   🗑️  {run.run_id} ({human_size(size)})")
            result['deleted_runs'].append(run.run_id)
            result['space_freed_bytes'] += size
        result['deleted_count'] = len(result['deleted_runs'])
        result['space_freed_human'] = human_size(result['space_freed_bytes'])
        return result

    def get_storage_stats(self) -> Dict[str, Any]:
        runs = self.list_runs()
        for run in runs:
            run.size_bytes = folder_size(run.path)
        total = sum(run.size_bytes for run in runs)
        return {
            'total_runs': len(runs),
            'total_size_bytes': total,
            'total_size_human': human_size(total),
            'runs': runs,
            'current_run': self.current_run_id,
        }

    def print_runs(self, stats: Dict[str, Any]):
        print(f"📊 Runs: {stats['total_runs']}  💾 {stats['total_size_human']}  "
              f"🔄 current: {stats['current_run']}\n")
        if not stats['runs']:
            return
        rule = "-" * 64
        print(rule)
        for run in stats['runs']:
            tag = "  ⭐ current" if run.is_current else ""
            print(f"  {run.run_id}  {human_size(run.size_bytes):>10}  {run.age_days:8.1f} d{tag}")
        print(rule + "\n")

    def _describe_policy(self, delete_all: bool):
        if delete_all:
            print("⚠️  --all: every run except the current one will be deleted\n")
            return
        keep = {
            "days": f"runs younger than {self.days} days",
            "count": f"the newest {self.count} runs",
            "hybrid": f"runs younger than {self.days} days or among the newest {self.count}",
        }[self.mode]
        print(f"Policy '{self.mode}': keep {keep}\n")

    def manual_cleanup(self, delete_all: bool = False, assume_yes: bool = False) -> Dict[str, Any]:
        """
        List the runs, preview what goes and ask before deleting

        Args:
            delete_all: delete every run except the current one
            assume_yes: skip the confirmation prompt (--yes)
        """
        stats = self.get_storage_stats()
        if not stats['total_runs']:
            print(f"No run folders under {self.base_dir}.")
            return _empty_result()
        self.print_runs(stats)
        self._describe_policy(delete_all)

        preview = self.cleanup_old_runs(dry_run=True, delete_all=delete_all)
        if not preview['deleted_count']:
            print("✅ Nothing to delete.")
            return preview
        print(f"{preview['deleted_count']} run(s) to delete, {preview['space_freed_human']}:")
        print("\n".join(f"  - {run_id}" for run_id in preview['deleted_runs']))

        if not assume_yes:
            try:
                answer = input("\nDelete them? (y/n): ").strip().lower()
            except (KeyboardInterrupt, EOFError):
                answer = ""
            if answer not in ("y", "yes"):
                print("❌ Cancelled, nothing deleted\n")
                return _empty_result()

        result = self.cleanup_old_runs(delete_all=delete_all)
        print(f"\n✅ Deleted {result['deleted_count']} run(s), freed {result['space_freed_human']}")
        for error in result['errors']:
            print(f"   ⚠️ {error['run_id']}: {error['error']}")
        return result
