"""Experiment commands, one module per CLI subcommand."""

from typing import Callable, Dict, Optional

from cli.commands import alessandrini, forward, gauge, invert, ndmap, tangent
from models.specs import ExperimentSpec
from services.artifacts import ArtifactWriter

CommandFn = Callable[[ExperimentSpec, ArtifactWriter, Optional[int], int], None]

COMMANDS: Dict[str, CommandFn] = {
    "forward": forward.run,
    "ndmap": ndmap.run,
    "alessandrini": alessandrini.run,
    "gauge": gauge.run,
    "tangent": tangent.run,
    "invert": invert.run,
}

__all__ = ["COMMANDS", "CommandFn"]
