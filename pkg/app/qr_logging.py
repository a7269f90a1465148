"""
QRobust Logging System
Structured logging with coloured console output, JSON run logs, performance
records and experiment results.
"""

import atexit
import json
import logging
import logging.handlers
import queue
import sys
import threading
import traceback
import uuid
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

ROOT_LOGGER_NAME = "qrobust"

PERF_LEVEL = 15
RESULT_LEVEL = 25


@dataclass
class LogEntry:
    """Structured log entry."""

    timestamp: str
    level: str
    message: str
    logger_name: str
    module: str
    function: str
    line_number: int
    thread_name: str
    process_id: int
    session_id: Optional[str] = None
    run_id: Optional[str] = None
    stage: Optional[str] = None
    context: Optional[Dict[str, Any]] = None
    exception_info: Optional[Dict[str, Any]] = None
    performance_metrics: Optional[Dict[str, float]] = None
    result: Optional[Dict[str, Any]] = None


class JSONFormatter(logging.Formatter):
    """JSON formatter for structured logging."""

    def __init__(self, include_context: bool = True, include_performance: bool = True):
        super().__init__()
        self.include_context = include_context
        self.include_performance = include_performance

    def format(self, record: logging.LogRecord) -> str:
        exc_info = None
        if record.exc_info:
            exc_info = {
                "type": record.exc_info[0].__name__ if record.exc_info[0] else None,
                "message": str(record.exc_info[1]) if record.exc_info[1] else None,
                "traceback": traceback.format_exception(*record.exc_info),
            }

        context = getattr(record, "context", None) if self.include_context else None
        log_entry = LogEntry(
            timestamp=datetime.fromtimestamp(record.created).isoformat(),
            level=record.levelname,
            message=record.getMessage(),
            logger_name=record.name,
            module=record.module or "unknown",
            function=record.funcName or "unknown",
            line_number=record.lineno,
            thread_name=record.threadName,
            process_id=record.process,
            session_id=getattr(record, "session_id", None),
            run_id=(context or {}).get("run_id"),
            stage=(context or {}).get("stage"),
            context=context,
            exception_info=exc_info,
            performance_metrics=getattr(record, "performance_metrics", None)
            if self.include_performance
            else None,
            result=getattr(record, "result", None),
        )

        return json.dumps(asdict(log_entry), default=str, separators=(",", ":"))


class ColoredFormatter(logging.Formatter):
    """Coloured console formatter."""

    COLORS = {
        "CRITICAL": "\033[41m",
        "ERROR": "\033[91m",
        "WARNING": "\033[93m",
        "INFO": "\033[92m",
        "DEBUG": "\033[94m",
        "RESULT": "\033[96m",
        "PERF": "\033[97m",
    }
    RESET = "\033[0m"

    def __init__(self, use_color: bool = True):
        super().__init__()
        self.use_color = use_color

    def format(self, record: logging.LogRecord) -> str:
        color = self.COLORS.get(record.levelname, "") if self.use_color else ""
        reset = self.RESET if color else ""

        timestamp = datetime.fromtimestamp(record.created).strftime("%H:%M:%S.%f")[:-3]
        name = record.name
        if name.startswith(ROOT_LOGGER_NAME + "."):
            name = name[len(ROOT_LOGGER_NAME) + 1 :]

        formatted = f"{color}[{timestamp}] {record.levelname:8} {name:16} {record.getMessage()}{reset}"

        if record.exc_info:
            formatted += f"\n{self.formatException(record.exc_info)}"

        return formatted


class PerformanceLogFilter(logging.Filter):
    """Passes performance records only."""

    def filter(self, record: logging.LogRecord) -> bool:
        return hasattr(record, "performance_metrics") or record.levelname == "PERF"


class ResultLogFilter(logging.Filter):
    """Passes experiment result records only."""

    def filter(self, record: logging.LogRecord) -> bool:
        return hasattr(record, "result") or record.levelname == "RESULT"


class ContextFilter(logging.Filter):
    """Stamps the session id and the active context stack onto each record."""

    def __init__(self, owner: "QRobustLogger"):
        super().__init__()
        self.owner = owner

    def filter(self, record: logging.LogRecord) -> bool:
        record.session_id = self.owner.session_id
        merged = self.owner.current_context()
        if merged:
            existing = getattr(record, "context", None) or {}
            record.context = {**merged, **existing}
        return True


class AsyncFileHandler(logging.Handler):
    """Queue-backed rotating file handler so that simulation threads never block on I/O."""

    def __init__(
        self,
        filename: str,
        maxBytes: int = 10485760,
        backupCount: int = 5,
        encoding: str = "utf-8",
    ):
        super().__init__()
        self.filename = filename
        self.queue: "queue.Queue[Optional[logging.LogRecord]]" = queue.Queue()
        self.file_handler = logging.handlers.RotatingFileHandler(
            filename, maxBytes=maxBytes, backupCount=backupCount, encoding=encoding
        )
        self._closed = False
        self.thread = threading.Thread(target=self._worker, daemon=True)
        self.thread.start()
        atexit.register(self.close)

    def setFormatter(self, fmt: Optional[logging.Formatter]) -> None:
        super().setFormatter(fmt)
        self.file_handler.setFormatter(fmt)

    def _worker(self):
        while True:
            try:
                record = self.queue.get(timeout=1.0)
            except queue.Empty:
                continue
            if record is None:
                break
            try:
                self.file_handler.emit(record)
            except Exception as e:
                sys.stderr.write(f"Error in async log handler: {e}\n")
            finally:
                self.queue.task_done()

    def emit(self, record: logging.LogRecord):
        # Render now: context attributes may be mutated by the time the worker runs.
        try:
            record.msg = record.getMessage()
            record.args = None
            self.queue.put_nowait(record)
        except queue.Full:
            pass

    def flush(self):
        self.queue.join()
        self.file_handler.flush()

    def close(self):
        if self._closed:
            return
        self._closed = True
        self.queue.put(None)
        self.thread.join(timeout=5.0)
        self.file_handler.close()
        super().close()


class QRobustLogger:
    """Package logger with structured logging capabilities."""

    def __init__(self, name: str = ROOT_LOGGER_NAME):
        self.name = name
        self.logger = logging.getLogger(name)
        self.session_id = str(uuid.uuid4())[:8]
        self._local = threading.local()
        self._add_custom_levels()
        self._configured = False

    def _add_custom_levels(self):
        logging.addLevelName(RESULT_LEVEL, "RESULT")

        def result(self, message, *args, **kwargs):
            if self.isEnabledFor(RESULT_LEVEL):
                self._log(RESULT_LEVEL, message, args, **kwargs)

        logging.Logger.result = result

        logging.addLevelName(PERF_LEVEL, "PERF")

        def perf(self, message, *args, **kwargs):
            if self.isEnabledFor(PERF_LEVEL):
                self._log(PERF_LEVEL, message, args, **kwargs)

        logging.Logger.perf = perf

    def configure(
        self,
        log_level: str = "INFO",
        log_file: Optional[str] = None,
        json_output: bool = True,
        colored_console: bool = True,
        enable_performance_logging: bool = True,
        enable_result_logging: bool = True,
        force: bool = False,
    ) -> None:
        """
        Configure logger with handlers and formatters.

        Args:
            log_level: Minimum log level (DEBUG, PERF, INFO, RESULT, WARNING, ...)
            log_file: Log file path (if None, no file logging)
            json_output: Use JSON formatting for file output
            colored_console: Use coloured console output
            enable_performance_logging: Write performance.log next to the main log
            enable_result_logging: Write results.log next to the main log
            force: Reconfigure even when already configured
        """
        if self._configured and not force:
            return

        level = logging.getLevelName(log_level.upper())
        if not isinstance(level, int):
            level = logging.INFO
        self.logger.setLevel(level)
        self.logger.propagate = False

        for handler in list(self.logger.handlers):
            handler.close()
        self.logger.handlers.clear()
        self.logger.filters.clear()
        self.logger.addFilter(ContextFilter(self))

        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setFormatter(ColoredFormatter(use_color=colored_console))
        console_handler.addFilter(ContextFilter(self))
        self.logger.addHandler(console_handler)

        if log_file:
            log_path = Path(log_file)
            log_path.parent.mkdir(parents=True, exist_ok=True)

            main_handler = AsyncFileHandler(str(log_path))
            if json_output:
                main_handler.setFormatter(JSONFormatter())
            else:
                main_handler.setFormatter(
                    logging.Formatter(
                        "%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s"
                    )
                )
            main_handler.addFilter(ContextFilter(self))
            self.logger.addHandler(main_handler)

            log_dir = log_path.parent
            if enable_performance_logging:
                perf_handler = AsyncFileHandler(str(log_dir / "performance.log"))
                perf_handler.addFilter(PerformanceLogFilter())
                perf_handler.addFilter(ContextFilter(self))
                perf_handler.setFormatter(JSONFormatter(include_context=False))
                self.logger.addHandler(perf_handler)

            if enable_result_logging:
                result_handler = AsyncFileHandler(str(log_dir / "results.log"))
                result_handler.addFilter(ResultLogFilter())
                result_handler.addFilter(ContextFilter(self))
                result_handler.setFormatter(JSONFormatter())
                self.logger.addHandler(result_handler)

        self._configured = True

    @property
    def context_stack(self) -> List[Dict[str, Any]]:
        stack = getattr(self._local, "stack", None)
        if stack is None:
            stack = []
            self._local.stack = stack
        return stack

    def push_context(self, **kwargs) -> None:
        self.context_stack.append(kwargs)

    def pop_context(self) -> Optional[Dict[str, Any]]:
        stack = self.context_stack
        return stack.pop() if stack else None

    def current_context(self) -> Dict[str, Any]:
        merged: Dict[str, Any] = {}
        for ctx in self.context_stack:
            merged.update(ctx)
        return merged

    def log_performance(self, operation: str, duration_ms: float, **metrics) -> None:
        perf_metrics = {"operation": operation, "duration_ms": duration_ms, **metrics}
        self.logger.perf(
            f"Performance: {operation} completed in {duration_ms:.2f}ms",
            extra={"performance_metrics": perf_metrics},
        )

    def log_result(self, message: str, **fields) -> None:
        """Log an experiment result (accuracy, robustness score, bound) as a structured record."""
        self.logger.result(message, extra={"result": fields})

    def log_epoch(
        self,
        epoch: int,
        loss: float,
        train_accuracy: float,
        test_accuracy: float,
        adversarial_accuracy: Optional[float] = None,
    ) -> None:
        fields = {
            "epoch": epoch,
            "loss": loss,
            "train_accuracy": train_accuracy,
            "test_accuracy": test_accuracy,
        }
        message = (
            f"Epoch {epoch}: loss={loss:.5f} train={train_accuracy:.3f} "
            f"test={test_accuracy:.3f}"
        )
        if adversarial_accuracy is not None:
            fields["adversarial_accuracy"] = adversarial_accuracy
            message += f" adversarial={adversarial_accuracy:.3f}"
        self.log_result(message, **fields)

    def get_logger(self) -> logging.Logger:
        return self.logger

    def shutdown(self) -> None:
        for handler in self.logger.handlers:
            handler.close()
        self.logger.handlers.clear()
        self._configured = False


class LogContext:
    """Context manager for adding temporary context to logs."""

    def __init__(self, logger: QRobustLogger, **context):
        self.logger = logger
        self.context = context

    def __enter__(self):
        self.logger.push_context(**self.context)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.logger.pop_context()


# Global logger instance
logger = QRobustLogger(ROOT_LOGGER_NAME)


def configure_logging(**kwargs):
    """Configure global logger."""
    logger.configure(**kwargs)


def get_logger(name: str = None) -> logging.Logger:
    """Get a logger in the package hierarchy; module names are nested under the root logger."""
    if not name:
        return logger.get_logger()
    if name == ROOT_LOGGER_NAME or name.startswith(ROOT_LOGGER_NAME + "."):
        return logging.getLogger(name)
    return logging.getLogger(f"{ROOT_LOGGER_NAME}.{name}")


def log_context(**context):
    """Create logging context manager."""
    return LogContext(logger, **context)


def log_performance(operation: str, duration_ms: float, **metrics) -> None:
    logger.log_performance(operation, duration_ms, **metrics)


def log_result(message: str, **fields) -> None:
    logger.log_result(message, **fields)


def log_epoch(*args, **kwargs) -> None:
    logger.log_epoch(*args, **kwargs)


def shutdown_logging():
    logger.shutdown()
