"""Converter exception hierarchy."""


class ConverterError(Exception):
    """Base class for everything this package raises on purpose."""


class ArchiveError(ConverterError):
    """The source archive is unreadable or not shaped like cell structs."""
