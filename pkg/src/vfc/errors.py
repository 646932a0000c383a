"""Error type shared by every module.

Each failure carries a short machine-readable ``code`` plus optional context
(chart id, branch, step) so the CLI can report it and pick an exit code.
"""

from __future__ import annotations

INPUT_CODES = frozenset({
    "SCHEMA", "IO", "BAD_DIM", "INFEASIBLE", "NOT_MEMBER", "NOT_MAPPED",
    "DEGREE_OVERFLOW", "DEGREE_MISMATCH", "BAD_NESTING", "GROUP_NOT_CLOSED",
    "NOT_LOCALLY_FINITE", "NOT_SUBMERSION", "NOT_UNITARY", "REJECTED",
    "DIM_UNSUPPORTED",
})

NUMERICAL_CODES = frozenset({
    "NONCONVERGED", "NOT_TRANSVERSE", "CANNOT_COVER", "CANNOT_SCALE",
    "NOT_COVERING", "AXIOM_VIOLATION", "SUPPORT_ESCAPE", "NO_TRANSVERSE_FOUND",
    "REFINEMENT_FAILED", "COVER_FAIL",
})


class VFCError(Exception):
    """Raised with a stable error ``code`` and free-form ``context``."""

    def __init__(self, code: str, message: str = "", **context):
        self.code = code
        self.message = message
        self.context = context
        detail = f"{code}: {message}" if message else code
        if context:
            detail += " (" + ", ".join(f"{k}={v}" for k, v in sorted(context.items())) + ")"
        super().__init__(detail)

    @property
    def is_input_error(self) -> bool:
        return self.code in INPUT_CODES

    def to_json(self) -> dict:
        return {"code": self.code, "message": self.message,
                "context": {k: str(v) for k, v in sorted(self.context.items())}}
