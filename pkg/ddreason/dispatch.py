"""
DDReason Dispatch
Thin orchestration layer between the CLI and the commands/ registry.
Maps DDReason errors onto process exit codes.
"""

import os
import sys
import traceback

# Ensure the ddreason directory is on the path so modules import each other
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from errors import DDRError
from logger import log

from commands import (
    COMMAND_DEFINITIONS,
    COMMAND_MAP,
    CommandResult,
    get_commands_help,
)


def dispatch_command(name: str, parameters: dict) -> CommandResult:
    """Run a registered command with the given parameters."""
    if name not in COMMAND_MAP:
        return CommandResult(
            success=False, stdout="",
            stderr=f"Unknown command: {name}. Available: {list(COMMAND_MAP.keys())}",
            return_code=2,
        )

    func = COMMAND_MAP[name]
    # Unset optional flags arrive as None
    clean_params = {k: v for k, v in parameters.items() if v is not None}
    try:
        return func(**clean_params)
    except DDRError as e:
        log.error(f"{name} failed ({type(e).__name__}): {e}")
        return CommandResult(success=False, stdout="", stderr=f"{type(e).__name__}: {e}",
                             return_code=e.exit_code)
    except TypeError as e:
        return CommandResult(success=False, stdout="",
                             stderr=f"Invalid parameters for {name}: {e}", return_code=2)
    except OSError as e:
        log.error(f"{name} failed on I/O: {e}")
        return CommandResult(success=False, stdout="", stderr=f"I/O error: {e}", return_code=3)
    except Exception as e:
        log.error(f"{name} crashed: {e}")
        log.debug(traceback.format_exc())
        return CommandResult(success=False, stdout="", stderr=f"Command execution error: {e}",
                             return_code=1)


__all__ = [
    "COMMAND_DEFINITIONS",
    "COMMAND_MAP",
    "CommandResult",
    "dispatch_command",
    "get_commands_help",
]
