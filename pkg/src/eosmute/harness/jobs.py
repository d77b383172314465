from abc import ABC, abstractmethod
from typing import Any, Dict
import logging
import time

logger = logging.getLogger(__name__)


class BaseJob(ABC):
    """One independent unit of harness work (a sweep cell, a defence chain, ...)"""

    def __init__(self, job_name: str):
        self.job_name = job_name
        self.logger = logging.getLogger(f"eosmute.job.{job_name}")

    @abstractmethod
    async def execute(self) -> Dict[str, Any]:
        """Execute the job's main functionality"""
        pass

    async def run(self) -> Dict[str, Any]:
        """Wrapper method with error handling; failures come back as data"""
        started = time.monotonic()
        try:
            self.logger.info(f"Starting {self.job_name}")
            result = await self.execute()
            self.logger.info(f"{self.job_name} completed in {time.monotonic() - started:.2f}s")
            return {**result, 'success': True}
        except Exception as e:
            self.logger.error(f"{self.job_name} failed: {type(e).__name__}: {e}")
            return {
                'error': f"{type(e).__name__}: {e}",
                'success': False
            }


class CallableJob(BaseJob):
    """Adapts an async callable returning a dict into a job"""

    def __init__(self, job_name: str, fn, *args, **kwargs):
        super().__init__(job_name)
        self.fn = fn
        self.args = args
        self.kwargs = kwargs

    async def execute(self) -> Dict[str, Any]:
        return await self.fn(*self.args, **self.kwargs)
