"""Exception types shared across the toolkit."""


class MlblError(Exception):
    """Base class for all toolkit errors."""


class DataError(MlblError):
    """Malformed or missing input data (corpus, segmentations, partitions, datasets)."""


class ModelFormatError(MlblError):
    """Corrupt model container or a model/vocabulary mismatch."""
