"""Exception types shared across the package."""


class SeglensError(Exception):
    """Base class for domain errors raised by this package."""


class CorpusError(SeglensError):
    pass


class VocabError(SeglensError):
    pass


class AlignmentError(SeglensError):
    pass


class StatsError(SeglensError):
    pass


class SimilarityError(SeglensError):
    pass


class ScoreError(SeglensError):
    pass


class TaggerError(SeglensError):
    pass
