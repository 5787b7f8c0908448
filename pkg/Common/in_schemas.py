from typing import Any, Dict, Optional

from pydantic import BaseModel, Field

from .in_config import PROJECT_NAME, TOOL_VERSION


class ProvenanceHeader(BaseModel):
    tool: str = PROJECT_NAME
    version: str = TOOL_VERSION
    command: str
    system: Optional[str] = None
    seed: Optional[int] = None
    config_hash: str = Field(..., description="sha256 of the canonical run configuration")


class ReportEnvelope(BaseModel):
    """A JSON report: provenance header plus the command-specific body."""

    header: ProvenanceHeader
    body: Dict[str, Any]
