"""Exception hierarchy.

Every error carries a short ``category`` tag so the command line can emit
machine-readable failures.
"""


class HamamError(Exception):
    category = "error"


class ParseError(HamamError):
    category = "parse"

    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


class ValidationError(HamamError):
    category = "validation"


class StratificationError(HamamError):
    category = "stratification"


class AlignmentError(HamamError):
    category = "alignment"


class VocabularyError(HamamError):
    category = "vocabulary"


class LexiconError(HamamError):
    category = "lexicon"


class ScheduleError(HamamError):
    category = "schedule"


class ConfigError(HamamError):
    category = "config"


class CheckpointError(HamamError):
    category = "checkpoint"


class TrainingError(HamamError):
    category = "training"


class UsageError(HamamError):
    category = "usage"
