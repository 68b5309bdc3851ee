"""Response schemas for the HTTP front door.

Outcome and feedback entries keep dict typing on purpose: their key
sets vary by status (ok, error, pruned, deferred) and feedback kind,
and the engine is the authority on those shapes.
"""

from typing import Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict


class WireError(BaseModel):
    code: str
    message: str


class ErrorResponse(BaseModel):
    error: WireError
    probe_id: Optional[str] = None


class ProbeResponse(BaseModel):
    model_config = ConfigDict(extra="forbid")

    probe_id: str
    outcomes: List[Dict]
    feedback: List[Dict]
    stats: Dict


WireResponse = Union[ProbeResponse, ErrorResponse]


class HealthResponse(BaseModel):
    status: str
    tables: int
    branches: int


class ReportRequest(BaseModel):
    mode: str
    trace_path: str
    baseline_path: Optional[str] = None
