"""Exception hierarchy shared by all ggfem modules."""


class GGFemError(Exception):
    """Base class for library errors."""


class DegenerateGeometryError(GGFemError):
    """A tetrahedron has zero volume (or an operation needs a nondegenerate one)."""


class ShapeMismatchError(GGFemError):
    """A tensor field has the wrong shape for the requested operator."""


class DegreeError(GGFemError):
    """Polynomial degree outside the supported or required range."""


class MeshError(GGFemError):
    """Invalid mesh topology or file contents."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SingularSystemError(GGFemError):
    """A matrix that should be invertible is singular."""

    def __init__(self, message, pivot_row=None):
        self.pivot_row = pivot_row
        super().__init__(message)


class MembershipError(GGFemError):
    """op(domain) is not contained in the codomain space (space construction bug)."""
