"""Service exports."""
from .logger import configure_logging
from .manifest import RunManifest
from .pipeline import cmd_baseline, cmd_collect, cmd_eval, cmd_finetune, cmd_run
from .reporting import cmd_report
from .run_directory import RunDirectory

__all__ = [
    "configure_logging",
    "RunManifest",
    "RunDirectory",
    "cmd_collect",
    "cmd_run",
    "cmd_eval",
    "cmd_finetune",
    "cmd_baseline",
    "cmd_report",
]
