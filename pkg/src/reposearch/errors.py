"""Exception hierarchy shared across the package."""


class RepoSearchError(Exception):
    """Base class for every error raised by this package."""


# repository index
class RootNotFound(RepoSearchError):
    pass


class EmptyRepository(RepoSearchError):
    pass


class FileNotInIndex(RepoSearchError, KeyError):
    def __init__(self, path: str):
        super().__init__(path)
        self.path = path

    def __str__(self) -> str:
        return f"file '{self.path}' not found in repository"


class EntityNotFound(RepoSearchError, KeyError):
    def __init__(self, path: str, name: str, suggestions=()):
        super().__init__(path, name)
        self.path = path
        self.name = name
        self.suggestions = list(suggestions)[:5]

    def __str__(self) -> str:
        return f"'{self.name}' not found in file '{self.path}'"


class InvalidQualifiedName(RepoSearchError, ValueError):
    pass


class CacheCorrupt(RepoSearchError):
    pass


# agent loop
class BackendUnavailable(RepoSearchError):
    pass


# metrics
class EmptyGroundTruth(RepoSearchError, ValueError):
    pass


class UnmatchedQuery(RepoSearchError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__(f"no ground truth for query ids: {', '.join(self.missing)}")


class MalformedIdentifier(RepoSearchError, ValueError):
    pass


class DuplicateItems(RepoSearchError, ValueError):
    pass


# dataset construction
class MalformedDiff(RepoSearchError, ValueError):
    pass


class RevisionMismatch(RepoSearchError):
    pass


class SourceUnavailable(RepoSearchError):
    pass


class AuthFailure(RepoSearchError):
    pass
