import logging
import logging.config
import os
import uuid
from typing import Any, Dict, Optional

from ..config.settings import settings


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None):
    """Setup structured logging configuration"""
    level = (level or settings.LOG_LEVEL).upper()
    log_dir = log_dir or settings.LOG_DIR
    logging_config = {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'standard': {
                'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
            },
            'json': {
                '()': 'pythonjsonlogger.jsonlogger.JsonFormatter',
                'fmt': '%(asctime)s %(name)s %(levelname)s %(message)s'
            }
        },
        'handlers': {
            'console': {
                'level': level,
                'class': 'logging.StreamHandler',
                'formatter': 'standard',
                'stream': 'ext://sys.stderr'
            },
            'file': {
                'level': 'DEBUG',
                'class': 'logging.FileHandler',
                'filename': os.path.join(log_dir, f'{settings.PROJECT_NAME}.log'),
                'formatter': 'standard'
            },
            'json_file': {
                'level': 'INFO',
                'class': 'logging.FileHandler',
                'filename': os.path.join(log_dir, 'structured.log'),
                'formatter': 'json'
            }
        },
        'loggers': {
            '': {
                'handlers': ['console', 'file', 'json_file'],
                'level': level,
                'propagate': True
            },
            'eosmute.run': {
                'handlers': ['file', 'json_file'],
                'level': 'DEBUG',
                'propagate': False
            },
            'torch': {
                'handlers': ['file'],
                'level': 'WARNING',
                'propagate': False
            }
        }
    }

    os.makedirs(log_dir, exist_ok=True)

    logging.config.dictConfig(logging_config)


class RunLogger:
    """Structured logger for training runs and harness jobs"""

    def __init__(self, run_name: str):
        self.logger = logging.getLogger(f'eosmute.run.{run_name}')
        self.run_name = run_name
        self.session_id = str(uuid.uuid4())

    def _emit(self, level: int, message: str, event: str, fields: Dict[str, Any]):
        self.logger.log(
            level,
            message,
            extra={
                'run': self.run_name,
                'session_id': self.session_id,
                'event': event,
                **fields
            }
        )

    def log_execution_start(self, input_data: Dict):
        self._emit(logging.INFO, "Run started", 'execution_start', {'input': input_data})

    def log_execution_end(self, result: Dict, execution_time: float):
        self._emit(
            logging.INFO,
            "Run completed",
            'execution_end',
            {'result': result, 'execution_time_seconds': execution_time}
        )

    def log_error(self, error: Exception, context: Dict = None):
        self._emit(
            logging.ERROR,
            "Run failed",
            'execution_error',
            {
                'error': str(error),
                'error_type': type(error).__name__,
                'context': context or {}
            }
        )

    def log_metric(self, metric_name: str, value: float, tags: Dict = None):
        self._emit(
            logging.INFO,
            "Run metric",
            'metric',
            {'metric_name': metric_name, 'metric_value': value, 'tags': tags or {}}
        )


def get_run_logger(run_name: str) -> RunLogger:
    """Get a configured run logger"""
    return RunLogger(run_name)
