"""
Task Runner - executes independent named tasks on a thread pool
"""

import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, Dict, List, Optional, TypeVar

from loguru import logger

T = TypeVar("T")


def resolve_workers(jobs: Optional[int] = None) -> int:
    """Requested worker count capped by RC_DENOISE_THREADS"""
    cap = int(os.getenv("RC_DENOISE_THREADS", "0")) or (os.cpu_count() or 1)
    requested = jobs if jobs and jobs > 0 else 1
    return max(1, min(requested, cap))


class TaskRunner:
    """Runs tasks in parallel and returns their results in submission order"""

    def __init__(self, jobs: Optional[int] = None, log_level: str = "INFO"):
        self.max_workers = resolve_workers(jobs)
        self.log_level = log_level

    def run(self, tasks: Dict[str, Callable[[], T]]) -> Dict[str, T]:
        """
        Run every task; failures are logged and the first one is re-raised
        once all tasks have finished

        Args:
            tasks: mapping of task name to zero-argument callable

        Returns:
            mapping of task name to result, in the order of `tasks`
        """
        results: Dict[str, T] = {}
        errors: List[Exception] = []

        if self.max_workers == 1 or len(tasks) <= 1:
            for name, task in tasks.items():
                try:
                    results[name] = task()
                    logger.log(self.log_level, f"✓ {name}")
                except Exception as e:
                    logger.error(f"✗ {name}: Failed - {e}")
                    errors.append(e)
        else:
            with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
                future_to_name = {executor.submit(task): name for name, task in tasks.items()}
                for future in as_completed(future_to_name):
                    name = future_to_name[future]
                    try:
                        results[name] = future.result()
                        logger.log(self.log_level, f"✓ {name}")
                    except Exception as e:
                        logger.error(f"✗ {name}: Failed - {e}")
                        errors.append(e)

        if errors:
            raise errors[0]
        return {name: results[name] for name in tasks}
