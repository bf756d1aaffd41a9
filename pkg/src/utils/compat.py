"""Backports of standard-library names missing from older Python versions."""

import enum

if hasattr(enum, "StrEnum"):
    StrEnum = enum.StrEnum
else:

    class StrEnum(str, enum.Enum):
        """Backport of `enum.StrEnum` (Python 3.11+)."""

        __str__ = str.__str__
        __format__ = str.__format__
