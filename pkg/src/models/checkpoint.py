"""
Self-describing checkpoint container shared by RNN-TD and every baseline.

Byte layout: an uncompressed ZIP archive (numpy ``.npz``). Each array is a
member ``<name>.npy`` in NPY format 1.0: the magic ``\\x93NUMPY``, version
bytes ``01 00``, a little-endian uint16 header length, an ASCII dict header
``{'descr': '<f8', 'fortran_order': False, 'shape': (...)}`` padded to a
64-byte boundary, then the raw row-major 64-bit little-endian values.
The member ``__meta__.npy`` is a uint8 array holding UTF-8 JSON with the
keys ``format`` (``rnn-td-ckpt``), ``version``, ``variant``, ``vocabulary``
(list of mark strings, index = mark id) and variant-specific fields
(dimensions, shaping kind and w, calendar settings, ...).
"""
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from src.core.config import CalendarConfig
from src.core.exceptions import CheckpointError, DimensionError, ValidationError
from src.core.numerics import as_matrix
from src.data.events import MarkVocabulary
from src.models.rnn_td import ModelParams, ShapingFunction
from src.utils.helpers import atomic_write_bytes

FORMAT = "rnn-td-ckpt"
VERSION = 1
META_KEY = "__meta__"
MATRIX_BLOCKS = ("W_ht", "W_he", "W_hh", "W_alpha", "embed")

PathLike = Union[str, Path]


@dataclass
class Checkpoint:
    variant: str
    arrays: Dict[str, np.ndarray]
    meta: Dict[str, Any] = field(default_factory=dict)
    vocabulary: MarkVocabulary = field(default_factory=MarkVocabulary)


def save_checkpoint(path: PathLike, checkpoint: Checkpoint) -> None:
    meta = dict(checkpoint.meta)
    meta.update({
        "format": FORMAT,
        "version": VERSION,
        "variant": checkpoint.variant,
        "vocabulary": list(checkpoint.vocabulary.tokens),
    })
    members = {name: np.ascontiguousarray(a, dtype="<f8") for name, a in checkpoint.arrays.items()}
    if META_KEY in members:
        raise CheckpointError(f"array name {META_KEY!r} is reserved")
    members[META_KEY] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    buffer = io.BytesIO()
    np.savez(buffer, **members)
    atomic_write_bytes(path, buffer.getvalue())


def load_checkpoint(path: PathLike) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with np.load(path, allow_pickle=False) as data:
            members = {name: data[name] for name in data.files}
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")
    if META_KEY not in members:
        raise CheckpointError(f"{path} has no metadata member")
    meta = json.loads(members.pop(META_KEY).tobytes().decode("utf-8"))
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path} is not an {FORMAT} file")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    vocabulary = MarkVocabulary(list(meta.pop("vocabulary", [])))
    variant = meta.pop("variant")
    return Checkpoint(variant=variant, arrays=members, meta=meta, vocabulary=vocabulary)


# --------------------------------------------------
# Neural models
# --------------------------------------------------
def params_to_checkpoint(variant: str, params: ModelParams, vocabulary: MarkVocabulary) -> Checkpoint:
    arrays = {k: v for k, v in params.blocks().items() if k != "w"}
    meta = {
        "head": params.head,
        "shaping": params.shaping.kind,
        "w": params.shaping.w,
        "dims": {"H": params.H, "K": params.K, "D_t": params.D_t, "D_e": params.D_e},
        "calendar": asdict(params.calendar),
    }
    return Checkpoint(variant, arrays, meta, vocabulary)


def params_from_checkpoint(checkpoint: Checkpoint) -> ModelParams:
    meta, arrays = checkpoint.meta, checkpoint.arrays
    try:
        matrices = {name: as_matrix(arrays[name]) for name in MATRIX_BLOCKS}
        W_nu = arrays.get("W_nu")
        params = ModelParams(
            **matrices,
            W_nu=None if W_nu is None else as_matrix(W_nu),
            b_nu=arrays.get("b_nu"),
            shaping=ShapingFunction(meta["shaping"], float(meta["w"])),
            head=meta["head"],
            calendar=CalendarConfig(**meta["calendar"]),
        )
    except KeyError as e:
        raise CheckpointError(f"checkpoint lacks field {e}")
    except (DimensionError, ValidationError) as e:
        raise CheckpointError(f"malformed model parameters: {e}")
    if checkpoint.vocabulary.K and checkpoint.vocabulary.K != params.K:
        raise CheckpointError(
            f"vocabulary has {checkpoint.vocabulary.K} marks, model has K={params.K}"
        )
    return params


def save_model(path: PathLike, variant: str, params: ModelParams, vocabulary: MarkVocabulary) -> None:
    save_checkpoint(path, params_to_checkpoint(variant, params, vocabulary))


def load_model(path: PathLike) -> Tuple[str, ModelParams, MarkVocabulary]:
    checkpoint = load_checkpoint(path)
    return checkpoint.variant, params_from_checkpoint(checkpoint), checkpoint.vocabulary
