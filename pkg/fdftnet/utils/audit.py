from datetime import datetime, timezone
from typing import Any, Dict, Optional
import json
import logging
import uuid

from .logger import setup_logger


class RunAuditLogger:
    """Structured JSON audit trail of runs, epochs, checkpoints and datasets."""

    def __init__(self):
        self._logger: Optional[logging.Logger] = None
        self.run_id = "-"

    @property
    def logger(self) -> logging.Logger:
        if self._logger is None:
            from ..config import Config
            self._logger = setup_logger("fdftnet.audit", Config.LOG_FILE_PATH, propagate=False)
        return self._logger

    def _entry(self,
        event_type: str,
        action: str,
        details: Optional[Dict[str, Any]] = None,
        status: str = "success"
    ) -> str:
        """One JSON line per event, tagged with the current run id."""
        audit_data = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "event_type": event_type,
            "run_id": self.run_id,
            "action": action,
            "status": status,
            "details": details or {}
        }
        return json.dumps(audit_data, default=str)

    def _emit(self, message: str, status: str) -> None:
        if status == "success":
            self.logger.info(message)
        else:
            self.logger.error(message)

    def start_run(self, command: str, details: Optional[Dict[str, Any]] = None) -> str:
        self.run_id = uuid.uuid4().hex[:12]
        self._emit(self._entry("run", command, details, "started"), "success")
        return self.run_id

    def finish_run(self,
        command: str,
        status: str = "success",
        details: Optional[Dict[str, Any]] = None
    ) -> None:
        self._emit(self._entry("run", command, details, status), status)

    def log_epoch(self, phase: str, record: Dict[str, Any]) -> None:
        """Log one training epoch."""
        self._emit(self._entry("training", phase, record), "success")

    def log_checkpoint_event(self,
        action: str,
        path: str,
        kind: str,
        n_tensors: int,
        size_bytes: int,
        status: str = "success"
    ) -> None:
        """Log checkpoint reads and writes."""
        details = {
            "path": path,
            "kind": kind,
            "n_tensors": n_tensors,
            "size_bytes": size_bytes,
        }
        self._emit(self._entry("checkpoint", action, details, status), status)

    def log_dataset_event(self,
        root: str,
        role: str,
        n_items: int,
        skipped: int,
        details: Optional[Dict[str, Any]] = None
    ) -> None:
        """Log dataset loads; skipped files are reported as a warning."""
        dataset_details = {"root": root, "role": role, "n_items": n_items, "skipped": skipped, **(details or {})}
        message = self._entry("dataset", "load", dataset_details, "success" if not skipped else "partial")
        if skipped:
            self.logger.warning(message)
        else:
            self.logger.info(message)

    def log_error(self,
        action: str,
        error: Exception,
        details: Optional[Dict[str, Any]] = None
    ) -> None:
        """Failures, with the exception type and message merged into details."""
        error_details = {
            "error_type": type(error).__name__,
            "error_message": str(error),
            **(details or {})
        }
        self.logger.error(self._entry("error", action, error_details, "error"))

# Shared by every command in the process
audit_logger = RunAuditLogger()
