"""Services module."""

from spinlab.services.analysis import WedgeDomain
from spinlab.services.emitter import CsvWriter, JsonWriter, ResultWriter, emit

__all__ = ["WedgeDomain", "ResultWriter", "CsvWriter", "JsonWriter", "emit"]
