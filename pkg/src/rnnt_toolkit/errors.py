class ShapeError(ValueError):
    """Raised when array dimensions do not agree with each other."""


class VocabularyError(ValueError):
    """Raised on out-of-inventory symbols or mismatched unit vocabularies."""
