"""Exception hierarchy shared across the package.

Data errors (bad inputs, bad directories) and model errors (loading,
inference, fitting) are kept on separate branches so the CLI can map
them to distinct exit codes.
"""


class AdwsError(Exception):
    """Base class for all package-specific errors."""


class DataError(AdwsError):
    """Problems with user-supplied images, directories, or dictionaries."""


class ModelError(AdwsError):
    """Problems with backbone loading, inference, or model fitting."""


# --- ingest ---------------------------------------------------------------

class MalformedImage(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class MissingDirectory(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


# --- backbone -------------------------------------------------------------

class ModelLoadError(ModelError):
    pass


class ShapeMismatch(ModelError):
    pass


class ProbeFailure(ModelError):
    pass


class InferenceError(ModelError):
    pass


# --- sift -----------------------------------------------------------------

class ImageTooSmall(DataError):
    pass


# --- selection ------------------------------------------------------------

class TooFewDescriptors(DataError):
    pass


class DimMismatch(ModelError):
    pass


class DictionaryFormatError(DataError):
    pass


class BackboneMismatch(DataError):
    pass


# --- normality ------------------------------------------------------------

class TooFewSamples(ModelError):
    pass


class NonFiniteInput(ModelError):
    pass


class EmptyTraining(ModelError):
    pass


# --- metrics --------------------------------------------------------------

class SingleClass(DataError):
    pass


class LengthMismatch(DataError):
    pass
