"""Command-line pipeline stages, run and resume."""
from .orchestrator import STAGES, resume_run, run_pipeline

__all__ = [
    'STAGES',
    'resume_run',
    'run_pipeline'
]
