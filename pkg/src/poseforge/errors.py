"""Exception hierarchy shared across the pipeline."""


class PoseForgeError(Exception):
    """Base class for every error raised by this package."""


# ingest
class MalformedFile(PoseForgeError):
    def __init__(self, path, detail):
        self.path = str(path)
        self.detail = detail
        super().__init__(f"{path}: {detail}")


class DuplicateImageId(MalformedFile):
    pass


class BadKeypointArity(MalformedFile):
    pass


class BadVisibility(MalformedFile):
    pass


class IndexOutOfRange(PoseForgeError, IndexError):
    pass


# prompts
class MissingAssets(PoseForgeError):
    pass


# backend
class BackendError(PoseForgeError):
    retryable = False


class AuthError(BackendError):
    pass


class ProviderError(BackendError):
    pass


class TransientError(BackendError):
    retryable = True


class RateLimited(TransientError):
    pass


class ExhaustedRetries(BackendError):
    def __init__(self, request_id, attempts, last_error):
        self.request_id = request_id
        self.attempts = attempts
        self.last_error = last_error
        super().__init__(f"{request_id}: gave up after {attempts} attempts ({last_error})")


# sample parsing
class UnparseableOutput(PoseForgeError):
    pass


class DanglingQuestion(UnparseableOutput):
    pass


class EmptyOutput(PoseForgeError):
    pass


# dataset / benchmark
class SchemaViolation(PoseForgeError):
    def __init__(self, path, line, detail):
        self.path = str(path)
        self.line = line
        self.detail = detail
        super().__init__(f"{path}:{line}: {detail}")


class NotEnoughImages(PoseForgeError):
    pass


class IncompleteBenchmark(PoseForgeError):
    def __init__(self, failures):
        self.failures = dict(failures)
        lines = ", ".join(f"{k} ({v})" for k, v in sorted(self.failures.items()))
        super().__init__(f"benchmark incomplete, failed items: {lines}")


# judging
class UnparseableVerdict(PoseForgeError):
    pass


class EmptyVerdicts(PoseForgeError, ValueError):
    pass


class ZeroReference(PoseForgeError, ValueError):
    pass


class MissingKind(PoseForgeError, KeyError):
    pass


class NonpositiveBase(PoseForgeError, ValueError):
    pass


class ConfigError(PoseForgeError):
    pass
