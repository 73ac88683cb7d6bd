"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for all pbtkit errors."""


class LayoutError(ToolkitError, ValueError):
    """Unknown label, incompatible layout, or a dimension that exceeds the memory cap."""


class KindMismatchError(ToolkitError, TypeError):
    """States and operators mixed where a single kind is required."""


class UnitarityError(ToolkitError, ValueError):
    """A matrix that must be unitary is not, beyond tolerance."""


class ProtocolError(ToolkitError, ValueError):
    """A protocol object violates one of its defining invariants."""


class ChainPreconditionError(ToolkitError, ValueError):
    """The message-chain protocol was invoked on a protocol that does not qualify."""
