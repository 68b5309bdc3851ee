from .types import Column, Schema, ResultSet, ColumnType, value_to_text
from .database import Database

__all__ = ["Column", "Schema", "ResultSet", "ColumnType", "Database", "value_to_text"]
