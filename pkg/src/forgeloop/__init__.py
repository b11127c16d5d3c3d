"""forgeloop: a self-extending LLM agent runtime.

The model speaks in fenced blocks; code blocks are staged to a known path,
shell blocks run one command at a time under policy, outputs feed the next
prompt, and everything lands in a replayable transcript.
"""

from .execution import CommandExecutor, Policy, PolicyMode
from .gateway import LiveEndpoint, ScriptedModel, load_script
from .loop import LoopConfig, SessionLoop
from .parsing import ParserConfig, parse_response
from .scenarios import load_scenario, run_scenario
from .session import PauseReason, SessionState, SessionStatus
from .snippets import read_latest, stage
from .transcript import TranscriptWriter, content_hash, load

__version__ = "0.1.0"

__all__ = [
    "CommandExecutor",
    "Policy",
    "PolicyMode",
    "LiveEndpoint",
    "ScriptedModel",
    "load_script",
    "LoopConfig",
    "SessionLoop",
    "ParserConfig",
    "parse_response",
    "load_scenario",
    "run_scenario",
    "PauseReason",
    "SessionState",
    "SessionStatus",
    "read_latest",
    "stage",
    "TranscriptWriter",
    "content_hash",
    "load",
    "__version__",
]
