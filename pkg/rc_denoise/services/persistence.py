"""
Model Persistence Service - versioned JSON model files
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger
from pydantic import BaseModel, ValidationError

from rc_denoise import __version__
from rc_denoise.exceptions import ModelParseError, SchemaVersionError
from rc_denoise.models import HyperParams
from rc_denoise.services.reservoir import EchoStateNetwork

SCHEMA_VERSION = 1


class ModelFile(BaseModel):
    schema_version: int
    code_version: str
    hyper: HyperParams
    seed: int
    washout: int
    w_res: List[List[float]]
    w_in: List[List[float]]
    bias: List[float]
    input_scale: List[float]
    node_ids: List[int]
    next_node_id: int
    input_channels: Tuple[str, ...]
    output_channels: Tuple[str, ...]
    ridge_lambda: Optional[float] = None
    w_out: Optional[List[List[float]]] = None
    metadata: Dict[str, Any] = {}


def save_model(esn: EchoStateNetwork, path, metadata: Optional[Dict[str, Any]] = None) -> Path:
    """Write `esn` as JSON; floats are written in round-trip precision"""
    document = ModelFile(
        schema_version=SCHEMA_VERSION,
        code_version=__version__,
        hyper=esn.hyper,
        seed=esn.seed,
        washout=esn.washout,
        w_res=esn.w_res.tolist(),
        w_in=esn.w_in.tolist(),
        bias=esn.bias.tolist(),
        input_scale=esn.input_scale.tolist(),
        node_ids=esn.node_ids.tolist(),
        next_node_id=esn.next_node_id,
        input_channels=esn.input_channels,
        output_channels=esn.output_channels,
        ridge_lambda=esn.ridge_lambda,
        w_out=None if esn.w_out is None else esn.w_out.tolist(),
        metadata=metadata or {},
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document.model_dump(mode="json"), allow_nan=False))
    logger.debug(f"Saved model N={esn.n_nodes} to {path}")
    return path


def load_model(path) -> EchoStateNetwork:
    """
    Read a model file written by `save_model`

    Raises:
        ModelParseError: malformed JSON (with byte offset) or invalid fields
        SchemaVersionError: missing or unsupported schema_version
    """
    raw = Path(path).read_bytes()
    text = raw.decode("utf-8", errors="replace")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode("utf-8"))
        raise ModelParseError(f"malformed model file {path}: {e.msg}", offset) from e
    if not isinstance(data, dict):
        raise ModelParseError(f"model file {path} does not contain a JSON object", 0)

    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"model file {path} has schema_version {version!r}; supported: {SCHEMA_VERSION}")

    try:
        document = ModelFile.model_validate(data)
    except ValidationError as e:
        raise ModelParseError(f"invalid model file {path}: {e.error_count()} field error(s): {e}") from e

    return EchoStateNetwork(
        w_res=np.array(document.w_res, dtype=float),
        w_in=np.array(document.w_in, dtype=float),
        bias=np.array(document.bias, dtype=float),
        hyper=document.hyper,
        seed=document.seed,
        washout=document.washout,
        w_out=None if document.w_out is None else np.array(document.w_out, dtype=float),
        input_scale=np.array(document.input_scale, dtype=float),
        node_ids=np.array(document.node_ids, dtype=int),
        input_channels=document.input_channels,
        output_channels=document.output_channels,
        ridge_lambda=document.ridge_lambda,
        next_node_id=document.next_node_id,
    )
