"""Exception hierarchy, grouped by the module that raises each error."""


class TagJoinError(Exception):
    """Base class for every error raised by the package."""


class QueryError(TagJoinError):
    """Errors caused by the query or plan, not by I/O. The CLI exits with 1."""


# bsp_core

class MaxSuperstepsExceeded(TagJoinError):
    pass


class PayloadTypeMismatch(TagJoinError):
    pass


class UnknownTarget(TagJoinError):
    pass


class NonCommutativeCombine(TagJoinError):
    pass


# tag_store

class StoreIoError(TagJoinError):
    """Wraps an OSError raised while reading schemas or CSV files."""


class SchemaError(TagJoinError):
    pass


class HeaderMismatch(TagJoinError):
    pass


class TypeParseError(TagJoinError):
    def __init__(self, row, column, text, type_name):
        super().__init__(f"row {row}, column {column!r}: cannot parse {text!r} as {type_name}")
        self.row = row
        self.column = column


class UnknownVertex(TagJoinError):
    pass


# query_frontend

class QuerySyntaxError(QueryError):
    def __init__(self, message, line, column):
        super().__init__(f"{message} at line {line}, column {column}")
        self.line = line
        self.column = column


class UnknownRelation(QueryError):
    pass


class UnboundVariable(QueryError):
    pass


class TooManyAtoms(QueryError):
    pass


class MalformedCover(QueryError):
    pass


class InvalidDecomposition(QueryError):
    pass


# plan_compiler / join_runtime

class PlanMismatch(QueryError):
    pass


class UnknownAttribute(QueryError):
    pass


class NotATriangle(QueryError):
    pass


class NotACycle(QueryError):
    pass


class MoreThanTwoJoinRoles(QueryError):
    pass


class UnsupportedQuery(QueryError):
    """Query shapes outside what the engine evaluates."""


# relalg_ext

class UnknownVariable(QueryError):
    pass


class FunctionTypeMismatch(QueryError):
    pass


class UncorrelatedBlock(QueryError):
    pass


# cli

class GeneratorError(QueryError):
    """Bad generator arguments."""
