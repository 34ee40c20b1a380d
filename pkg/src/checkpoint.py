"""
Checkpoint Archive

A checkpoint is a single zip archive:

    header.json        versioned manifest: parameter names/shapes/files,
                       normalization stats, graph fingerprint, best loss
    config.yaml        model and training configuration
    params/NNN.bin     raw little-endian float64 parameter buffers

Entries are written in a fixed order with fixed timestamps so identical
checkpoints produce identical bytes.
"""

import io
import json
import logging
import zipfile
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Union

import numpy as np
import yaml
from pydantic import ValidationError

from .config import HydroNetConfig, TrainConfig
from .dataset import NormStats
from .errors import CorruptCheckpoint, FingerprintMismatch
from .graph import PipeGraph

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hydronet-checkpoint"
CHECKPOINT_VERSION = 1
_DTYPE = "<f8"
_FIXED_TIME = (1980, 1, 1, 0, 0, 0)


@dataclass(eq=False)
class Checkpoint:
    model_config: HydroNetConfig
    train_config: TrainConfig
    params: "OrderedDict[str, np.ndarray]"
    norm_stats: NormStats
    edge_stats: NormStats
    graph_fingerprint: str
    best_val_loss: float
    epoch: int

    def verify_graph(self, graph: PipeGraph) -> None:
        actual = graph.fingerprint()
        if actual != self.graph_fingerprint:
            raise FingerprintMismatch(
                f"checkpoint was trained on graph {self.graph_fingerprint[:12]}, "
                f"bound graph is {actual[:12]}"
            )

    def to_model(self, graph: PipeGraph):
        """Rebuild the HydroNet model, after checking the graph fingerprint."""
        from .hydronet import HydroNet, param_shapes
        from .tensor import Tensor

        self.verify_graph(graph)
        expected = param_shapes(self.model_config)
        if list(expected) != list(self.params):
            raise CorruptCheckpoint("parameter names do not match the stored model configuration")
        params = OrderedDict()
        for name, (shape, _) in expected.items():
            if self.params[name].shape != shape:
                raise CorruptCheckpoint(f"parameter {name!r} has shape {self.params[name].shape}, expected {shape}")
            params[name] = Tensor(self.params[name].copy(), requires_grad=True, name=name)
        return HydroNet(self.model_config, graph, params=params, edge_stats=self.edge_stats)


def _write(archive: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_TIME)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    archive.writestr(info, payload)


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    manifest = []
    buffers = []
    for i, (name, value) in enumerate(ckpt.params.items()):
        array = np.ascontiguousarray(value, dtype=_DTYPE)
        entry = f"params/{i:03d}.bin"
        manifest.append({"name": name, "shape": list(array.shape), "dtype": _DTYPE, "file": entry})
        buffers.append((entry, array.tobytes()))

    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "graph_fingerprint": ckpt.graph_fingerprint,
        "best_val_loss": ckpt.best_val_loss,
        "epoch": ckpt.epoch,
        "norm_stats": ckpt.norm_stats.to_dict(),
        "edge_stats": ckpt.edge_stats.to_dict(),
        "params": manifest,
    }
    config = {
        "model": ckpt.model_config.model_dump(mode="json"),
        "train": ckpt.train_config.model_dump(mode="json"),
    }

    stream = io.BytesIO()
    with zipfile.ZipFile(stream, "w") as archive:
        _write(archive, "header.json", json.dumps(header, indent=2).encode("utf-8"))
        _write(archive, "config.yaml", yaml.safe_dump(config, sort_keys=False).encode("utf-8"))
        for entry, payload in buffers:
            _write(archive, entry, payload)
    return stream.getvalue()


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(ckpt))
    logger.info("saved checkpoint %s (epoch %d, val loss %.6g)", path, ckpt.epoch, ckpt.best_val_loss)
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Read a checkpoint; raises CorruptCheckpoint on any format violation."""
    path = Path(path)
    if not path.exists():
        raise CorruptCheckpoint(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path, "r") as archive:
            header = json.loads(archive.read("header.json").decode("utf-8"))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise CorruptCheckpoint(f"{path} is not a HydroNet checkpoint")
            if header.get("version") != CHECKPOINT_VERSION:
                raise CorruptCheckpoint(f"unsupported checkpoint version {header.get('version')!r}")
            config = yaml.safe_load(archive.read("config.yaml").decode("utf-8"))
            params: Dict[str, np.ndarray] = OrderedDict()
            for item in header["params"]:
                payload = archive.read(item["file"])
                shape = tuple(item["shape"])
                expected = int(np.prod(shape, dtype=np.int64)) * 8
                if item.get("dtype") != _DTYPE or len(payload) != expected:
                    raise CorruptCheckpoint(
                        f"parameter {item['name']!r}: {len(payload)} bytes, expected {expected}"
                    )
                params[item["name"]] = np.frombuffer(payload, dtype=_DTYPE).reshape(shape).astype(np.float64)
            return Checkpoint(
                model_config=HydroNetConfig.model_validate(config["model"]),
                train_config=TrainConfig.model_validate(config["train"]),
                params=params,
                norm_stats=NormStats.from_dict(header["norm_stats"]),
                edge_stats=NormStats.from_dict(header["edge_stats"]),
                graph_fingerprint=str(header["graph_fingerprint"]),
                best_val_loss=float(header["best_val_loss"]),
                epoch=int(header["epoch"]),
            )
    except CorruptCheckpoint:
        raise
    except (zipfile.BadZipFile, KeyError, TypeError, ValueError, ValidationError, yaml.YAMLError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
