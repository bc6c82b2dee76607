"""HTTP facade over the toolkit.

The FastAPI app exposes the same operations as the CLI (data synthesis,
open-loop estimation benchmark, closed-loop runs, one-shot dispatch
solves, report comparison) with pydantic-validated payloads. The CLI
talks to it in-process by default, so local use never opens a socket.
"""

from .app import create_app
from . import schemas

__all__ = ["create_app", "schemas"]
