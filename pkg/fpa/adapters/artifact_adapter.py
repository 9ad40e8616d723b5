"""
Artifact Adapter - Deterministic on-disk formats

Every artifact is written so that identical inputs give byte-identical files:
JSON with sorted keys, raw little-endian float32 payloads, CSV through pandas with
a fixed float format. Nothing embeds wall-clock time.
"""

import base64
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from exceptions import ArtifactMismatchError, DataError
from models import (
    CHECKPOINT_FORMAT_VERSION,
    Checkpoint,
    LayerSpec,
    ModelParams,
    Normalization,
)

FLOAT_FORMAT = "%.9g"
_LE_FLOAT32 = np.dtype("<f4")


class ArtifactAdapter:
    """
    Adapter between in-memory results and files.

    Responsibilities:
    - JSON documents (checkpoints, sidecars, fidelity results)
    - Flat float32 binaries (saliency maps, per-sample curves)
    - CSV tables (metrics, curves, fidelity table)
    """

    # ------------------------------------------------------------------
    # JSON
    # ------------------------------------------------------------------

    @staticmethod
    def write_json(path, document: Any) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        text = json.dumps(document, indent=2, sort_keys=True, ensure_ascii=False)
        path.write_text(text + "\n", encoding="utf-8")
        return path

    @staticmethod
    def read_json(path) -> Any:
        path = Path(path)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise DataError(f"artifact not found: {path}") from e
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: corrupt JSON at line {e.lineno}: {e.msg}") from e

    # ------------------------------------------------------------------
    # Flat binaries
    # ------------------------------------------------------------------

    @staticmethod
    def write_bin(path, array: np.ndarray) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(np.ascontiguousarray(array, dtype=_LE_FLOAT32).tobytes())
        return path

    @staticmethod
    def read_bin(path, shape: Tuple[int, ...]) -> np.ndarray:
        path = Path(path)
        try:
            data = path.read_bytes()
        except FileNotFoundError as e:
            raise DataError(f"artifact not found: {path}") from e
        expected = int(np.prod(shape)) * _LE_FLOAT32.itemsize
        if len(data) != expected:
            raise ArtifactMismatchError(
                f"{path}: {len(data)} bytes on disk, {expected} expected for shape {shape}"
            )
        return np.frombuffer(data, dtype=_LE_FLOAT32).reshape(shape).astype(np.float32)

    # ------------------------------------------------------------------
    # CSV
    # ------------------------------------------------------------------

    @staticmethod
    def write_csv(path, rows: List[Dict[str, Any]], columns: List[str]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame(rows, columns=columns)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return path

    @staticmethod
    def write_grid_csv(path, grid: np.ndarray) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(np.asarray(grid, dtype=np.float64)).to_csv(
            path, index=False, header=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
        return path

    @staticmethod
    def read_csv(path) -> pd.DataFrame:
        path = Path(path)
        if not path.exists():
            raise DataError(f"artifact not found: {path}")
        return pd.read_csv(path)

    # ------------------------------------------------------------------
    # Checkpoints
    # ------------------------------------------------------------------

    @staticmethod
    def encode_array(array: np.ndarray) -> Dict[str, Any]:
        data = np.ascontiguousarray(array, dtype=_LE_FLOAT32).tobytes()
        return {"shape": list(array.shape), "data": base64.b64encode(data).decode("ascii")}

    @staticmethod
    def decode_array(entry: Dict[str, Any]) -> np.ndarray:
        shape = tuple(entry["shape"])
        raw = base64.b64decode(entry["data"])
        array = np.frombuffer(raw, dtype=_LE_FLOAT32).astype(np.float32)
        if array.size != int(np.prod(shape)):
            raise DataError(f"parameter payload does not match shape {shape}")
        return array.reshape(shape)

    @staticmethod
    def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
        model = checkpoint.model
        document = {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "layers": [layer.model_dump(mode="json") for layer in model.layers],
            "input_shape": list(model.input_shape),
            "num_classes": model.num_classes,
            "normalization": checkpoint.normalization.model_dump(mode="json"),
            "seed": checkpoint.seed,
            "arm": checkpoint.arm,
            "config_hash": checkpoint.config_hash,
            "test_accuracy": checkpoint.test_accuracy,
            "param_order": model.parameter_names(),
            "params": {
                name: ArtifactAdapter.encode_array(value)
                for name, value in model.params.items()
            },
        }
        return ArtifactAdapter.write_json(path, document)

    @staticmethod
    def load_checkpoint(path, expected_hash: Optional[str] = None) -> Checkpoint:
        """
        Raises:
            DataError: missing or corrupt file, unknown format version
            ArtifactMismatchError: checkpoint from a different config
        """
        document = ArtifactAdapter.read_json(path)
        version = document.get("format_version")
        if version != CHECKPOINT_FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint format {version!r}")
        if expected_hash is not None and document["config_hash"] != expected_hash:
            raise ArtifactMismatchError(
                f"{path} was produced by config {document['config_hash'][:12]}, "
                f"current config is {expected_hash[:12]}"
            )
        params = {
            name: ArtifactAdapter.decode_array(document["params"][name])
            for name in document["param_order"]
        }
        model = ModelParams(
            layers=[LayerSpec.model_validate(layer) for layer in document["layers"]],
            input_shape=tuple(document["input_shape"]),
            num_classes=int(document["num_classes"]),
            params=params,
        )
        return Checkpoint(
            model=model,
            normalization=Normalization.model_validate(document["normalization"]),
            seed=int(document["seed"]),
            arm=document["arm"],
            config_hash=document["config_hash"],
            test_accuracy=document.get("test_accuracy"),
        )
