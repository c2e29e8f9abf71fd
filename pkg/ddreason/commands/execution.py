"""
Command: Execution
Run a fork/stack program on a scene file.
"""

from commands import CommandResult
from progexec import execute, load_scene


COMMAND_DEFINITIONS = [
    {
        "name": "exec",
        "description": "Execute a program (space-separated tokens, arity prefixes optional) on a scene file.",
        "parameters": {
            "scene": {"type": "string", "description": "Scene file: 'shape color size material x y' lines or JSON.", "required": True},
            "program": {"type": "string", "description": "e.g. \"filter_color_red fork filter_shape_sphere union count\".", "required": True},
        },
    },
]


def exec_command(scene: str, program: str) -> CommandResult:
    answer = execute(load_scene(scene), program)
    return CommandResult(success=True, stdout=str(answer), stderr="", return_code=0)


COMMAND_MAP = {
    "exec": exec_command,
}
