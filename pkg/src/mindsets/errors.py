"""Exception hierarchy shared by every stage of the pipeline."""


class MindsetsError(Exception):
    """Base class for all toolkit errors."""


# volume_io
class UnsupportedFormat(MindsetsError):
    pass


class CorruptHeader(MindsetsError):
    pass


class NonFiniteData(MindsetsError):
    pass


class NonIntegerLabels(MindsetsError):
    pass


class DimsMismatch(MindsetsError):
    pass


class LabelAbsent(MindsetsError):
    pass


# radiomics
class EmptyRoi(MindsetsError):
    pass


class WrongMatrixKind(MindsetsError):
    pass


# tabular
class WrongItemCount(MindsetsError):
    pass


class UnknownPatient(MindsetsError):
    pass


class DuplicateFragment(MindsetsError):
    pass


class EmptyTrainSet(MindsetsError):
    pass


class ClassAbsent(MindsetsError):
    pass


# select / eval
class LengthMismatch(MindsetsError):
    pass


class TooFewGroups(MindsetsError):
    pass


class SingleClass(MindsetsError):
    pass


# dfg
class DimMismatch(MindsetsError):
    pass


class SingleClassTrainSet(MindsetsError):
    pass


class ModelVersionMismatch(MindsetsError):
    pass


# explain / monitor
class UnparseableName(MindsetsError):
    pass


class NoVisits(MindsetsError):
    pass


class MissingTimepoint(MindsetsError):
    pass


# synth
class InvalidSpec(MindsetsError):
    pass


class InvalidCohort(MindsetsError):
    pass
