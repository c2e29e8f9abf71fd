"""
DDReason Commands: Command Loader
Discovers and loads every command module in this folder.

Every command file must expose:
  • COMMAND_DEFINITIONS : list[dict]   name, description, parameters
  • COMMAND_MAP         : dict[str, callable] command name → function

Parameters are described as {"type": ..., "description": ..., "default": ...}
with type one of "string", "integer", "number", "boolean", plus
"required": True for parameters the command cannot run without.
"""

import importlib.util
import os
import sys
import traceback
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

from logger import log


@dataclass
class CommandResult:
    """Result of a command execution."""
    success: bool
    stdout: str
    stderr: str
    return_code: int
    file_path: str = ""  # main output file, if the command wrote one


# ── Command Registry ────────────────────────────────────────────────────────

COMMAND_DEFINITIONS: List[dict] = []
COMMAND_MAP: Dict[str, Callable] = {}

_commands_dir = os.path.dirname(os.path.abspath(__file__))
_loaded_modules: Dict[str, object] = {}


def _load_command_module(file_path: str, module_name: str) -> Optional[object]:
    """Load a single command module from disk."""
    try:
        spec = importlib.util.spec_from_file_location(module_name, file_path)
        if spec is None or spec.loader is None:
            log.warning(f"Cannot create spec for command module: {file_path}")
            return None
        mod = importlib.util.module_from_spec(spec)
        sys.modules[module_name] = mod
        spec.loader.exec_module(mod)
        return mod
    except Exception as e:
        log.error(f"Failed to load command module '{module_name}' from {file_path}: {e}")
        log.debug(traceback.format_exc())
        return None


def _register_commands(mod, module_name: str) -> int:
    defs = getattr(mod, "COMMAND_DEFINITIONS", [])
    cmap = getattr(mod, "COMMAND_MAP", {})
    if not defs and not cmap:
        log.debug(f"Command module '{module_name}' has no COMMAND_DEFINITIONS or COMMAND_MAP, skipping.")
        return 0

    for d in defs:
        name = d.get("name")
        if name in COMMAND_MAP:
            log.warning(f"Command '{name}' from {module_name} replaces an earlier definition.")
            COMMAND_DEFINITIONS[:] = [x for x in COMMAND_DEFINITIONS if x.get("name") != name]
        COMMAND_DEFINITIONS.append(d)

    for name, func in cmap.items():
        COMMAND_MAP[name] = func
    return len(cmap)


def load_all_commands():
    """Discover and load all .py command files in this directory."""
    COMMAND_DEFINITIONS.clear()
    COMMAND_MAP.clear()
    _loaded_modules.clear()

    command_files = sorted(f for f in os.listdir(_commands_dir)
                           if f.endswith(".py") and f != "__init__.py")
    for filename in command_files:
        module_name = f"commands.{filename[:-3]}"
        mod = _load_command_module(os.path.join(_commands_dir, filename), module_name)
        if mod is None:
            continue
        count = _register_commands(mod, module_name)
        _loaded_modules[module_name] = mod
        log.debug(f"  Loaded command module: {filename} ({count} commands)")


def get_commands_help() -> str:
    """Human-readable summary of every command and its parameters."""
    lines = ["Available commands:\n"]
    for command in COMMAND_DEFINITIONS:
        lines.append(f'• {command["name"]}: {command["description"]}')
        params = command.get("parameters", {})
        if not params:
            lines.append("  Parameters: (none)\n")
            continue
        rendered = []
        for k, v in params.items():
            default = " [required]" if v.get("required") else (f' [default: {v["default"]}]' if "default" in v else "")
            rendered.append(f'{k} ({v["type"]}): {v["description"]}{default}')
        lines.append("  Parameters: " + "; ".join(rendered) + "\n")
    return "\n".join(lines)


# ── Auto-load on import ────────────────────────────────────────────────────
load_all_commands()
