#!/usr/bin/env python3
"""FastAPI server for the protocol testbed."""

import logging
import os
from typing import Any, Dict, List, Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel

from protocol_testbed.application.config_service import parse_config, validate_config
from protocol_testbed.application.experiment_service import ExperimentService
from protocol_testbed.application.plugin_catalog import default_registry
from protocol_testbed.application.plugin_registry import PluginDescriptor, PluginKind
from protocol_testbed.domain.errors import ConfigStructureError, ConfigSyntaxError

logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(title="Protocol Testbed")

# Add CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Initialize plugins and services
registry = default_registry()
experiment_service = ExperimentService(registry)


# Pydantic models
class ValidateRequest(BaseModel):
    config: str


class RunExperimentRequest(BaseModel):
    config: str
    seed: Optional[int] = None
    test: Optional[str] = None
    output_dir: Optional[str] = None
    parallel: int = 1


def _descriptor_summary(descriptor: PluginDescriptor) -> Dict[str, Any]:
    return {
        "kind": descriptor.kind.value,
        "name": descriptor.name,
        "version": descriptor.version,
        "description": descriptor.description,
        "protocols": list(descriptor.protocols),
        "schema": [
            {
                "key": schema_field.key,
                "type": schema_field.value_type.value,
                "required": schema_field.required,
                "default": schema_field.default,
                "range": list(schema_field.range) if schema_field.range else None,
                "choices": list(schema_field.choices) if schema_field.choices else None,
            }
            for schema_field in descriptor.schema
        ],
    }


def _parse(text: str):
    try:
        return parse_config(text)
    except (ConfigSyntaxError, ConfigStructureError) as e:
        raise HTTPException(status_code=400, detail=str(e))


# API endpoints
@app.get("/api/health")
async def health_check():
    """Health check endpoint."""
    return {"status": "ok"}


@app.get("/plugins")
async def list_plugins(kind: Optional[str] = None) -> List[Dict[str, Any]]:
    """Registered plugins, by kind then name."""
    if kind is None:
        return [_descriptor_summary(d) for d in registry.all()]
    try:
        plugin_kind = PluginKind.parse(kind)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return [_descriptor_summary(d) for d in registry.list_by_kind(plugin_kind)]


@app.post("/validate")
async def validate(request: ValidateRequest):
    """Validate an experiment document."""
    report = validate_config(_parse(request.config), registry)
    return report.to_dict()


@app.post("/experiments/run")
def run_experiment(request: RunExperimentRequest):
    """Validate and run an experiment document; results are also written to its output directory."""
    config = _parse(request.config)
    logger.info("run request for %s", config.name)
    output_dir = request.output_dir or os.environ.get("PTB_OUTPUT_DIR")
    result = experiment_service.run(
        config,
        output_dir=output_dir,
        seed=request.seed,
        test_filter=request.test,
        parallel=max(request.parallel, 1),
    )
    summary = result.to_dict()
    summary["exit_code"] = result.exit_code
    summary["output_dir"] = str(result.output_dir) if result.output_dir else None
    if result.validation is not None:
        summary["validation"] = result.validation.to_dict()
    return summary


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="0.0.0.0", port=8000)
