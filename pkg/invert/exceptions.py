class InvertException(Exception):
    """ Base class for all invert-related errors
    """
    pass

class InvertShapeError(InvertException):
    """ Tensor shape or dimension mismatch. """
    pass

class InvertNumericError(InvertException):
    """ A non-finite value appeared during evaluation.

    layer -- index of the offending layer, if raised inside a stack
    iteration -- recovery/training iteration, if raised inside a loop
    """
    def __init__(self, msg, layer = None, iteration = None):
        InvertException.__init__(self, msg)
        self.layer = layer
        self.iteration = iteration

class InvertInvalidOperationException(InvertException):
    """ Error performing an operation (eg, reusing a consumed tape) """
    pass

class InvertValueError(InvertException):
    """ Invalid argument or configuration value. """
    pass

class InvertConfigError(InvertException):
    """ Malformed configuration document. """
    pass

class InvertIOError(InvertException):
    """ Error accessing or parsing a file. """
    def __init__(self, msg, path = None):
        if path is not None:
            msg = "%s: %s" % (path, msg)
        InvertException.__init__(self, msg)
        self.path = path

class CheckpointFormatError(InvertIOError):
    """ Checkpoint has a bad magic string or a corrupt header. """
    pass

class CheckpointVersionError(InvertIOError):
    """ Checkpoint was written by an incompatible format version. """
    pass

class CheckpointTruncatedError(InvertIOError):
    """ Checkpoint payload ends before all parameters were read. """
    pass

class IdxMagicError(InvertIOError):
    """ IDX file does not start with the expected magic number. """
    pass

class IdxCountMismatchError(InvertIOError):
    """ IDX image and label files disagree on the number of items. """
    pass

class IdxTruncatedError(InvertIOError):
    """ IDX file ends before its declared payload. """
    pass
