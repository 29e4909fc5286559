class ExportError(Exception):
    """Base class for export failures."""


class WeightsUnavailable(ExportError):
    """Pretrained weights could not be retrieved, or the requested tap
    point does not exist."""


class ExportValidationFailure(ExportError):
    """The serialized model disagrees with the source network."""
