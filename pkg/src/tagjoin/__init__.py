"""Join evaluation over a tuple-attribute graph with vertex-centric BSP programs."""
from .query import parse
from .runtime import tag_join
from .tag_store import build_tag, load_database, load_schema

__version__ = "0.1.0"

__all__ = ["build_tag", "load_database", "load_schema", "parse", "tag_join"]
