"""Exception types shared across the package."""


class EsapError(Exception):
    """Base class for all package errors."""


# corpus / version store
class InvalidChunkConfig(EsapError):
    pass


class StoreWriteError(EsapError):
    pass


class VersionNotFound(EsapError):
    pass


class CorpusFormatError(EsapError):
    pass


# index
class EmptyCorpus(EsapError):
    pass


class EmbedderFailure(EsapError):
    def __init__(self, message: str, chunk_id: str | None = None):
        super().__init__(message)
        self.chunk_id = chunk_id


class DimensionMismatch(EsapError):
    pass


class FormatVersionMismatch(EsapError):
    pass


class CorruptIndex(EsapError):
    pass


# ports
class ScriptExhausted(EsapError):
    pass


class TransportError(EsapError):
    pass


class ModelRefusal(EsapError):
    pass


class SqlSyntaxError(EsapError):
    pass


class SqlRuntimeError(EsapError):
    pass


class SqlTimeout(EsapError):
    pass


class NonSelectRejected(EsapError):
    pass


# answer pipeline
class EmptyIndex(EsapError):
    pass


class NoContext(EsapError):
    pass


# sql agent
class EmptyResult(EsapError):
    pass


class ThorFailed(EsapError):
    def __init__(self, message: str, log=None):
        super().__init__(message)
        self.log = log


# evaluation
class EvidenceNotFound(EsapError):
    pass


class DatasetFormatError(EsapError):
    pass


class RunsFormatError(EsapError):
    pass


class MissingGold(EsapError):
    pass


# configuration / cli
class ConfigError(EsapError):
    pass
