"""Binary checkpoint format for trained models.

Layout: 4-byte magic, little-endian u32 format version, little-endian u64
header length, UTF-8 JSON header, then the raw float64 (little-endian)
parameter sections in the order the header lists them. The JSON header is
serialized with sorted keys and no whitespace, and floats are written via
repr round-trip, so saving a loaded checkpoint reproduces the file byte for
byte.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .data import Scaler, SplitSpec
from .errors import CheckpointError
from .model import (FactorModel, InteractionCNN, NlrModel, TemporalEncoder,
                    pool_applies)
from .training import PARAM_NAMES, TrainConfig, TrainTrace

MAGIC = b"WQCK"
FORMAT_VERSION = 1

CP_SECTIONS = ("S", "U", "V")
SCALER_SECTIONS = ("scaler_min", "scaler_max")


@dataclass
class Checkpoint:
    """Everything needed to rebuild a trained model and its data context."""

    model_kind: str  # "cp" | "nlr-cnn"
    dims: tuple[int, int, int]
    station_ids: tuple[str, ...]
    parameter_names: tuple[str, ...]
    time_stamps: tuple[str, ...]
    config: TrainConfig
    split: SplitSpec
    scaler: Scaler
    trace_summary: dict
    arrays: dict[str, np.ndarray]

    def build_model(self):
        a = self.arrays
        if self.model_kind == "cp":
            return FactorModel(a["S"].copy(), a["U"].copy(), a["V"].copy())
        if self.model_kind == "nlr-cnn":
            return NlrModel(
                factors=FactorModel(a["S"].copy(), a["U"].copy(), a["V"].copy()),
                encoder=TemporalEncoder(a["encoder_w"].copy(), a["encoder_b"].copy()),
                cnn=InteractionCNN(
                    a["conv3_k"].copy(), a["conv3_b"].copy(),
                    a["conv2_k"].copy(), a["conv2_b"].copy(),
                    a["conv1_k"].copy(), a["conv1_b"].copy(),
                    a["head_w"].copy(), a["head_b"].copy(),
                    use_pool=pool_applies(self.config.rank)))
        raise CheckpointError(f"unknown model kind {self.model_kind!r}")


def checkpoint_from_training(model_kind: str, model, tensor, config: TrainConfig,
                             split: SplitSpec, scaler: Scaler,
                             trace: TrainTrace) -> Checkpoint:
    if model_kind == "cp":
        arrays = {name: getattr(model, name).copy() for name in CP_SECTIONS}
    elif model_kind == "nlr-cnn":
        arrays = {name: p.copy() for name, p in model.params().items()}
    else:
        raise CheckpointError(f"unknown model kind {model_kind!r}")
    return Checkpoint(
        model_kind=model_kind, dims=tensor.dims,
        station_ids=tensor.station_ids, parameter_names=tensor.parameter_names,
        time_stamps=tensor.time_stamps, config=config, split=split,
        scaler=scaler, trace_summary=trace.summary(), arrays=arrays)


def _required_sections(model_kind: str) -> tuple[str, ...]:
    if model_kind == "cp":
        return CP_SECTIONS + SCALER_SECTIONS
    if model_kind == "nlr-cnn":
        return PARAM_NAMES + SCALER_SECTIONS
    raise CheckpointError(f"unknown model kind {model_kind!r}")


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    sections = dict(ckpt.arrays)
    sections["scaler_min"] = ckpt.scaler.mins
    sections["scaler_max"] = ckpt.scaler.maxs
    order = list(_required_sections(ckpt.model_kind))
    missing = [n for n in order if n not in sections]
    if missing:
        raise CheckpointError(f"cannot save: missing sections {missing}")

    header = {
        "model": ckpt.model_kind,
        "dims": list(ckpt.dims),
        "station_ids": list(ckpt.station_ids),
        "parameter_names": list(ckpt.parameter_names),
        "time_stamps": list(ckpt.time_stamps),
        "config": ckpt.config.as_dict(),
        "split": {"ratios": list(ckpt.split.ratios), "seed": ckpt.split.seed},
        "trace": ckpt.trace_summary,
        "sections": [{"name": n, "shape": list(sections[n].shape)} for n in order],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in order:
            fh.write(np.ascontiguousarray(sections[name], dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise CheckpointError("truncated checkpoint (shorter than the fixed header)")
    if raw[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {version} (this build reads {FORMAT_VERSION})")
    header_len = struct.unpack("<Q", raw[8:16])[0]
    if len(raw) < 16 + header_len:
        raise CheckpointError("truncated checkpoint (incomplete header)")
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"corrupt checkpoint header: {err}") from None

    try:
        model_kind = header["model"]
        dims = tuple(header["dims"])
        config = TrainConfig.from_dict(header["config"])
        split = SplitSpec(tuple(header["split"]["ratios"]), header["split"]["seed"])
        section_table = header["sections"]
        maps = (tuple(header["station_ids"]), tuple(header["parameter_names"]),
                tuple(header["time_stamps"]))
    except (KeyError, TypeError) as err:
        raise CheckpointError(f"checkpoint header missing field: {err}") from None

    offset = 16 + header_len
    sections: dict[str, np.ndarray] = {}
    for item in section_table:
        name, shape = item["name"], tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"truncated checkpoint (section {name} incomplete)")
        sections[name] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"checkpoint has {len(raw) - offset} trailing bytes")

    expected = _required_sections(model_kind)
    missing = [n for n in expected if n not in sections]
    if missing:
        raise CheckpointError(f"checkpoint missing sections {missing}")

    scaler = Scaler(sections.pop("scaler_min"), sections.pop("scaler_max"))
    return Checkpoint(
        model_kind=model_kind, dims=dims,
        station_ids=maps[0], parameter_names=maps[1], time_stamps=maps[2],
        config=config, split=split, scaler=scaler,
        trace_summary=header["trace"], arrays=sections)
