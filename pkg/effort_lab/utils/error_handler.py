"""
Error handling and logging for effort_lab.

Provides the console/file log formatting, a bounded error collector and the
handler the harness and CLI use to record and report failures.
"""

import json
import logging
import sys
import threading
import traceback
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional


class ErrorSeverity(Enum):
    """Error severity"""
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"
    CRITICAL = "critical"


class ErrorCategory(Enum):
    """Error category"""
    DATA_ERROR = "data_error"
    VALIDATION_ERROR = "validation_error"
    COMPUTATION_ERROR = "computation_error"
    ISOLATION_ERROR = "isolation_error"
    NETWORK_ERROR = "network_error"
    AUTHENTICATION_ERROR = "auth_error"
    SYSTEM_ERROR = "system_error"


class EnhancedFormatter(logging.Formatter):
    """Coloured console formatter"""

    COLORS = {
        'DEBUG': '\033[36m',
        'INFO': '\033[32m',
        'WARNING': '\033[33m',
        'ERROR': '\033[31m',
        'CRITICAL': '\033[35m',
    }
    RESET = '\033[0m'

    def __init__(self, use_color: bool = True):
        super().__init__()
        self.use_color = use_color

    def format(self, record):
        color = self.COLORS.get(record.levelname, '') if self.use_color else ''
        reset = self.RESET if self.use_color else ''

        timestamp = datetime.fromtimestamp(record.created).strftime('%Y-%m-%d %H:%M:%S.%f')[:-3]

        formatted_message = (
            f"{color}[{timestamp}] "
            f"{record.levelname:8s} "
            f"{record.name:24s} "
            f"│ {record.getMessage()}"
            f"{reset}"
        )

        if record.exc_info:
            formatted_message += f"\n{color}Exception: {self.formatException(record.exc_info)}{reset}"

        return formatted_message


def setup_logging(level: str = "INFO", log_file: Optional[str] = None) -> logging.Logger:
    """Install handlers on the package logger and return it."""
    logger = logging.getLogger("effort_lab")
    logger.setLevel(logging.DEBUG)
    logger.handlers.clear()
    logger.propagate = False

    # stderr keeps stdout free for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(getattr(logging, level.upper(), logging.INFO))
    console_handler.setFormatter(EnhancedFormatter(use_color=sys.stderr.isatty()))
    logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_formatter = logging.Formatter(
            '%(asctime)s | %(levelname)-8s | %(name)-24s | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        file_handler = logging.FileHandler(log_path, encoding='utf-8')
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(file_formatter)
        logger.addHandler(file_handler)

        error_file = log_path.parent / f"{log_path.stem}_errors.log"
        error_handler = logging.FileHandler(error_file, encoding='utf-8')
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(file_formatter)
        logger.addHandler(error_handler)

    return logger


class ErrorCollector:
    """Bounded, thread-safe record of handled errors"""

    def __init__(self, max_errors: int = 1000):
        self.max_errors = max_errors
        self.errors: List[Dict[str, Any]] = []
        self._lock = threading.Lock()

    def add_error(
        self,
        error: Exception,
        severity: ErrorSeverity,
        category: ErrorCategory,
        context: Optional[Dict[str, Any]] = None,
    ) -> None:
        record = {
            "timestamp": datetime.now().isoformat(),
            "error_type": type(error).__name__,
            "message": str(error),
            "severity": severity.value,
            "category": category.value,
            "context": context or {},
            "traceback": "".join(traceback.format_exception(type(error), error, error.__traceback__))
            if error.__traceback__ else None,
        }
        with self._lock:
            self.errors.append(record)
            if len(self.errors) > self.max_errors:
                self.errors = self.errors[-self.max_errors:]

    def get_recent_errors(self, limit: int = 50) -> List[Dict[str, Any]]:
        with self._lock:
            return list(self.errors[-limit:])

    def get_error_stats(self) -> Dict[str, Any]:
        with self._lock:
            errors = list(self.errors)
        by_severity: Dict[str, int] = {}
        by_category: Dict[str, int] = {}
        for error in errors:
            by_severity[error["severity"]] = by_severity.get(error["severity"], 0) + 1
            by_category[error["category"]] = by_category.get(error["category"], 0) + 1
        return {
            "total_errors": len(errors),
            "by_severity": by_severity,
            "by_category": by_category,
            "last_error": errors[-1] if errors else None,
        }

    def clear(self) -> None:
        with self._lock:
            self.errors.clear()


class EstimationErrorHandler:
    """Records and logs failures raised while loading data, fitting and collecting."""

    def __init__(self, logger_name: str = "effort_lab"):
        self.error_collector = ErrorCollector()
        self.logger = logging.getLogger(logger_name)

    @staticmethod
    def classify(error: Exception) -> tuple:
        """Return (severity, category) for any exception."""
        category = getattr(error, "category", None)
        severity = getattr(error, "severity", None)
        if isinstance(category, ErrorCategory) and isinstance(severity, ErrorSeverity):
            return severity, category
        if isinstance(error, (ConnectionError, TimeoutError)):
            return ErrorSeverity.HIGH, ErrorCategory.NETWORK_ERROR
        if isinstance(error, (ValueError, TypeError)):
            return ErrorSeverity.MEDIUM, ErrorCategory.VALIDATION_ERROR
        if isinstance(error, PermissionError):
            return ErrorSeverity.HIGH, ErrorCategory.AUTHENTICATION_ERROR
        if isinstance(error, (FloatingPointError, ArithmeticError)):
            return ErrorSeverity.MEDIUM, ErrorCategory.COMPUTATION_ERROR
        return ErrorSeverity.HIGH, ErrorCategory.SYSTEM_ERROR

    def handle_fold_error(
        self,
        error: Exception,
        dataset: str,
        treatment: str,
        repeat: int,
        fold: int,
    ) -> None:
        """Record an estimator failure on one fold; the caller falls back."""
        severity, category = self.classify(error)
        context = {"dataset": dataset, "treatment": treatment, "repeat": repeat, "fold": fold}
        self.error_collector.add_error(error, severity, category, context)
        self.logger.warning(
            f"⚠️ {treatment} failed on {dataset} r{repeat}/f{fold}: {error} | fallback=training mean"
        )

    def handle_data_error(self, error: Exception, source: str, context: Optional[Dict[str, Any]] = None) -> None:
        severity, category = self.classify(error)
        self.error_collector.add_error(error, severity, category, {"source": source, **(context or {})})
        self.logger.error(f"❌ Data error [{source}]: {error}")

    def handle_network_error(self, error: Exception, repo: str, endpoint: Optional[str] = None) -> None:
        severity, category = self.classify(error)
        self.error_collector.add_error(error, severity, category, {"repo": repo, "endpoint": endpoint})
        self.logger.error(f"❌ Network error [{repo}] {endpoint or ''}: {error}")

    def log_info(self, message: str, **kwargs):
        self.logger.info(f"{message} | {json.dumps(kwargs, default=str) if kwargs else ''}")

    def log_error(self, message: str, **kwargs):
        self.logger.error(f"{message} | {json.dumps(kwargs, default=str) if kwargs else ''}")

    def summary(self) -> Dict[str, Any]:
        """Error statistics with a coarse status label."""
        stats = self.error_collector.get_error_stats()
        status = "clean"
        if stats["total_errors"]:
            status = "degraded"
        if stats["by_severity"].get("critical", 0) > 0:
            status = "failed"
        return {"status": status, "error_statistics": stats, "timestamp": datetime.now().isoformat()}


error_handler = EstimationErrorHandler()
