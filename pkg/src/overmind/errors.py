"""Exception hierarchy shared across the toolchain."""


class OvermindError(Exception):
    """Base class for every domain error raised by this package."""


# approximation
class DegenerateFit(OvermindError):
    pass


class PoleInRange(OvermindError):
    pass


class TargetUnreachable(OvermindError):
    def __init__(self, message, node_id=None, best_mae=None):
        super().__init__(message)
        self.node_id = node_id
        self.best_mae = best_mae


# graph IR
class ParseError(OvermindError):
    def __init__(self, path, message=""):
        super().__init__(f"{path}: {message}" if message else path)
        self.path = path


class UnknownOperator(OvermindError):
    pass


class CyclicGraph(OvermindError):
    def __init__(self, src, dst):
        super().__init__(f"cycle through back-edge {src} -> {dst}")
        self.edge = (src, dst)


# reference execution / quantization
class ShapeError(OvermindError):
    pass


class MissingCalibration(OvermindError):
    pass


class CalibrationError(OvermindError):
    pass


# binary formats
class FormatError(OvermindError):
    def __init__(self, message, offset=None, bundle_index=None):
        where = []
        if offset is not None:
            where.append(f"offset {offset}")
        if bundle_index is not None:
            where.append(f"bundle {bundle_index}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(message + suffix)
        self.offset = offset
        self.bundle_index = bundle_index


# compiler / simulator
class PlacementError(OvermindError):
    pass


class ConfigError(OvermindError):
    pass


class SimulationFault(OvermindError):
    pass
