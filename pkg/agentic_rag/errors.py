# errors.py
# Exceptions raised by the harness. Tool-level problems never surface as these:
# they are rendered as error ToolResults and fed back to the model.
from typing import Iterable, List


class AgenticRagError(RuntimeError):
    """Base class for every error the CLI turns into exit status 1."""


class ConfigError(AgenticRagError):
    pass


class IngestionError(AgenticRagError):
    pass


class DocumentNotFoundError(AgenticRagError):
    def __init__(self, doc_id: str):
        super().__init__(f"document not found: {doc_id}")
        self.doc_id = doc_id


class IndexBuildError(AgenticRagError):
    pass


class TooManyQueriesError(AgenticRagError, ValueError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"too many queries (max {cap})")
        self.count = count
        self.cap = cap


class ScriptExhaustedError(AgenticRagError):
    """A scripted client ran out of canned responses mid-run."""


class ModelCallError(AgenticRagError):
    """A model call failed; the run ends with an aborted answer."""


class ModelTransportError(ModelCallError):
    """The model endpoint could not be reached or answered with a server error."""


class ModelRequestError(ModelCallError):
    """The endpoint rejected the request (bad request, auth, context length). Not retried."""


class QuerySetError(AgenticRagError):
    def __init__(self, message: str, offenders: Iterable[str] = ()):
        self.offenders: List[str] = list(offenders)
        if self.offenders:
            message = f"{message}: " + "; ".join(self.offenders)
        super().__init__(message)


class BaselineMismatchError(AgenticRagError):
    def __init__(self, missing: Iterable[str]):
        self.missing = sorted(missing)
        super().__init__("baseline run does not cover query ids: " + ", ".join(self.missing))
