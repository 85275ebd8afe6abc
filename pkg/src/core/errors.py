"""
Exception hierarchy shared by every service module
"""

from typing import Optional


class LegionError(Exception):
    """Base class for every error raised by the lab"""


class PolicyMismatch(LegionError, ValueError):
    """A sanitization rule does not fit the record schema"""


class EmptyInput(LegionError, ValueError):
    pass


class IndexOutOfRange(LegionError, IndexError):
    pass


class UnknownTarget(LegionError, KeyError):
    """Revocation named a digest that was never published"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown target"


class NonFiniteInput(LegionError, ValueError):
    pass


class DivergentBound(LegionError, ArithmeticError):
    """RDP sum overflowed even in log space"""


class Unachievable(LegionError, ValueError):
    """Requested privacy target lies below the order-grid floor"""


class QuantizationOverflow(LegionError, OverflowError):
    pass


class RosterIncomplete(LegionError, ValueError):
    """An expected client is missing, so the pairwise masks cannot cancel"""


class DimensionMismatch(LegionError, ValueError):
    pass


class EmptyData(LegionError, ValueError):
    pass


class DuplicateItem(LegionError, ValueError):
    pass


class SaltCountMismatch(LegionError, ValueError):
    pass


class ItemAbsent(LegionError, KeyError):
    """Prover does not hold the requested item"""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "item absent"


class UnknownNode(LegionError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown node"


class RoleViolation(LegionError, PermissionError):
    pass


class MalformedInput(LegionError, ValueError):
    """Raised by decoders for truncated or corrupted byte/text input"""


class ConfigInvalid(LegionError, ValueError):
    """Scenario configuration failed validation"""

    def __init__(self, field_path: str, message: str, value: Optional[object] = None):
        self.field_path = field_path
        self.value = value
        super().__init__(f"{field_path}: {message}")
