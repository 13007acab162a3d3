"""Exception hierarchy.

Each class carries the process exit code the command line maps it to.
"""


class GraphTokError(Exception):
    exit_code = 1


class ParseError(GraphTokError):
    """Malformed input file. ``location`` names the byte offset, line or record."""

    exit_code = 2

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{message} (at {location})"
        super().__init__(message)


class ValidationError(GraphTokError):
    exit_code = 3


class InvalidProposal(ValidationError):
    pass


class DuplicateObjectId(ValidationError):
    pass


class TooManyObjects(ValidationError):
    pass


class EmptyScene(ValidationError):
    pass


class ShapeError(ValidationError, ValueError):
    pass


class GenerationError(ValidationError):
    pass


class MissingFeature(GraphTokError, KeyError):
    exit_code = 4

    def __str__(self):
        return Exception.__str__(self)


class MissingEdgeFeature(MissingFeature):
    def __init__(self, src, dst):
        self.src = src
        self.dst = dst
        super().__init__(f"no edge feature for pair ({src}, {dst})")


class TrainingDiverged(GraphTokError):
    exit_code = 5

    def __init__(self, step, loss):
        self.step = step
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at step {step}")
