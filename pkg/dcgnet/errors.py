"""Error categories raised by dcgnet.

Every error derives from :class:`DCGNetError` and from the builtin it most closely
resembles, so ``except ValueError`` keeps working for callers that do not know
about dcgnet. The command line maps each category to its own exit code.
"""


class DCGNetError(Exception):
    """Base class of every error raised by dcgnet"""

    exit_code: int = 1


class ConfigError(DCGNetError, ValueError):
    """
    One or more configuration values are invalid

    Parameters
    ----------
    violations: list[str]
        Every violation found, reported together
    """

    exit_code = 2

    def __init__(self, violations: list[str]):
        self.violations: list[str] = list(violations)
        super().__init__(
            "invalid configuration:\n" + "\n".join("  - " + v for v in self.violations)
        )


class MeshError(DCGNetError, ValueError):
    """A mesh is malformed or cannot be processed"""

    exit_code = 3


class ObjParseError(MeshError):
    """A Wavefront OBJ record could not be parsed"""


class NonTriangleFaceError(MeshError):
    """An OBJ face record has a vertex count other than three"""


class FaceIndexError(MeshError):
    """A face references a vertex index outside the vertex list"""


class DisconnectedMeshError(MeshError):
    """The edge graph of a template mesh has more than one component"""


class DecimationError(MeshError):
    """Edge collapse cannot reach the requested vertex count"""


class ShapeError(DCGNetError, ValueError):
    """Operands of a tensor operation have incompatible shapes"""

    exit_code = 4

    def __init__(self, operation: str, *shapes: tuple):
        self.operation = operation
        self.shapes = shapes
        super().__init__(
            operation
            + ": incompatible shapes "
            + " and ".join(str(tuple(s)) for s in shapes)
        )


class DatasetError(DCGNetError, ValueError):
    """A dataset, sample or regressor file is missing or inconsistent"""

    exit_code = 5


class CheckpointError(DCGNetError, ValueError):
    """A checkpoint file is malformed or does not match the network"""

    exit_code = 6
