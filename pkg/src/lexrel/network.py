"""The relation classifier: recognition cells, dense trunk, and heads.

For a concept pair (x, y) the network runs one single-relation-recognition
cell per non-random relation prototype. Cell j infers a candidate object
from (x, prototype_j) and a candidate subject from (y, prototype_j), then
scores each against the actual other concept:

    u1 = tanh((x ⊕ p) @ w1 + b1)        u3 = tanh((u1 - y) @ w3 + b3)
    u2 = tanh((y ⊕ p) @ w2 + b2)        u4 = tanh((u2 - x) @ w4 + b4)

All u3/u4 blocks are concatenated together with skip connections from the
raw x and y, fed through a tanh dense trunk of width d, and finished by
either a per-relation binary head (relation vs random) or the multi-way
head. Prototypes are constants: they never receive gradients.

Parameters live in a flat dict of float64 arrays keyed by block name
("cell.w1", "trunk.w", "meta.<relation>.w", "final.w", ...), with an
optional per-relation cell mode ("cell.<relation>.w1", ...).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import RelationLabel, RelationSet
from .errors import DataError, NumericalError
from .prototypes import PrototypeSet

PROB_EPS = 1e-12

CHECKPOINT_MAGIC = b"LEXREL-CKPT-v1\n"


@dataclass(frozen=True)
class SrrCellParams:
    """Weights and biases of one recognition cell (w1/w2: (2d, d); w3/w4: (d, d))."""

    w1: np.ndarray
    w2: np.ndarray
    w3: np.ndarray
    w4: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b3: np.ndarray
    b4: np.ndarray

    def as_tuple(self):
        return (self.w1, self.w2, self.w3, self.w4, self.b1, self.b2, self.b3, self.b4)


class NetworkParams:
    """All trainable arrays plus the relation-set layout they were built for."""

    def __init__(
        self,
        dim: int,
        relation_set: RelationSet,
        arrays: dict[str, np.ndarray],
        shared_cell: bool = True,
    ):
        self.dim = int(dim)
        self.relation_set = relation_set
        self.relation_names = tuple(l.name for l in relation_set.non_random())
        self.shared_cell = bool(shared_cell)
        self.arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            self.dim,
            self.relation_set,
            {k: v.copy() for k, v in self.arrays.items()},
            self.shared_cell,
        )

    def cell(self, relation: str | None = None) -> SrrCellParams:
        prefix = "cell." if self.shared_cell else f"cell.{relation}."
        if not self.shared_cell and relation is None:
            raise DataError("per-relation cells need a relation name")
        try:
            return SrrCellParams(*(self.arrays[prefix + k] for k in
                                   ("w1", "w2", "w3", "w4", "b1", "b2", "b3", "b4")))
        except KeyError as e:
            raise DataError(f"missing cell parameter block: {e}") from None

    @property
    def has_meta_heads(self) -> bool:
        return any(k.startswith("meta.") for k in self.arrays)

    def without_meta_heads(self) -> "NetworkParams":
        """Drop the binary heads; trunk and cell arrays are copied untouched."""
        kept = {k: v.copy() for k, v in self.arrays.items() if not k.startswith("meta.")}
        return NetworkParams(self.dim, self.relation_set, kept, self.shared_cell)

    def with_fresh_final_head(self, rng: np.random.Generator) -> "NetworkParams":
        out = self.copy()
        n_classes = len(self.relation_set)
        out.arrays["final.w"] = _glorot(rng, (self.dim, n_classes))
        out.arrays["final.b"] = np.zeros(n_classes)
        return out

    def count(self, include_meta: bool = True) -> int:
        total = 0
        for k, v in self.arrays.items():
            if not include_meta and k.startswith("meta."):
                continue
            total += int(v.size)
        return total

    def close_to(self, other: "NetworkParams") -> bool:
        return set(self.arrays) == set(other.arrays) and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays
        )


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_in, fan_out = shape
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_params(
    dim: int,
    relation_set: RelationSet,
    seed: int | np.random.Generator,
    shared_cell: bool = True,
) -> NetworkParams:
    """Deterministic initialization: uniform Xavier weights, zero biases."""
    if dim < 1:
        raise DataError(f"dimension must be >= 1, got {dim}")
    non_ran = [l.name for l in relation_set.non_random()]
    if not non_ran:
        raise DataError("relation set has no non-random relations")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    arrays: dict[str, np.ndarray] = {}

    def add_cell(prefix: str) -> None:
        arrays[prefix + "w1"] = _glorot(rng, (2 * dim, dim))
        arrays[prefix + "w2"] = _glorot(rng, (2 * dim, dim))
        arrays[prefix + "w3"] = _glorot(rng, (dim, dim))
        arrays[prefix + "w4"] = _glorot(rng, (dim, dim))
        for b in ("b1", "b2", "b3", "b4"):
            arrays[prefix + b] = np.zeros(dim)

    if shared_cell:
        add_cell("cell.")
    else:
        for name in non_ran:
            add_cell(f"cell.{name}.")

    trunk_in = 2 * len(non_ran) * dim + 2 * dim
    arrays["trunk.w"] = _glorot(rng, (trunk_in, dim))
    arrays["trunk.b"] = np.zeros(dim)

    for name in non_ran:
        arrays[f"meta.{name}.w"] = _glorot(rng, (dim, 2))
        arrays[f"meta.{name}.b"] = np.zeros(2)

    n_classes = len(relation_set)
    arrays["final.w"] = _glorot(rng, (dim, n_classes))
    arrays["final.b"] = np.zeros(n_classes)

    return NetworkParams(dim, relation_set, arrays, shared_cell)


def parameter_count(
    dim: int,
    relation_set: RelationSet | int,
    shared_cell: bool = True,
    include_meta: bool = True,
    n_classes: int | None = None,
) -> int:
    """Exact parameter count for a configuration (plain integer arithmetic).

    `relation_set` may be a RelationSet or the number of non-random
    relations (then `n_classes` must be given).
    """
    if isinstance(relation_set, RelationSet):
        k = len(relation_set.non_random())
        n_classes = len(relation_set)
    else:
        k = int(relation_set)
        if n_classes is None:
            raise DataError("n_classes is required when passing a plain relation count")
    cell_block = 2 * (2 * dim * dim) + 2 * (dim * dim) + 4 * dim
    total = cell_block * (1 if shared_cell else k)
    total += (2 * k * dim + 2 * dim) * dim + dim  # trunk
    if include_meta:
        total += k * (2 * dim + 2)
    total += n_classes * dim + n_classes  # final head
    return total


def trunk_input_width(params: NetworkParams) -> int:
    return params.arrays["trunk.w"].shape[0]


# ---------------------------------------------------------------------------
# forward / backward


def srr_forward(x, y, proto, cell: SrrCellParams):
    """Hidden states (u3, u4) of one cell for a single concept pair."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    proto = np.asarray(proto, dtype=np.float64)
    d = cell.w3.shape[0]
    for name, v in (("x", x), ("y", y), ("proto", proto)):
        if v.shape != (d,):
            raise DataError(f"{name} has shape {v.shape}, expected ({d},)")
    if cell.w1.shape != (2 * d, d) or cell.w2.shape != (2 * d, d):
        raise DataError("cell w1/w2 must have shape (2d, d)")
    _, _, u3, u4 = _kernels.cell_forward(
        x[None, :], y[None, :], proto[None, :], *cell.as_tuple()
    )
    return u3[0, 0], u4[0, 0]


def _check_protos(params: NetworkParams, protos: PrototypeSet) -> np.ndarray:
    if protos.relation_names != params.relation_names:
        raise DataError(
            f"prototype relations {protos.relation_names} do not match "
            f"network relations {params.relation_names}"
        )
    if protos.dim != params.dim:
        raise DataError(f"prototype dim {protos.dim} != network dim {params.dim}")
    return protos.matrix


def _resolve_head(params: NetworkParams, head) -> tuple[str, str]:
    """Normalize head selection to (kind, array-key prefix)."""
    if head == "final":
        if "final.w" not in params.arrays:
            raise DataError("network has no final head")
        return "final", "final"
    if isinstance(head, tuple) and len(head) == 2 and head[0] == "meta":
        name = head[1]
        label = params.relation_set.get(name)
        if label.is_random:
            raise DataError("the random class has no recognition task or meta head")
        key = f"meta.{name}"
        if key + ".w" not in params.arrays:
            raise DataError(f"no meta head for relation {name!r} (discarded?)")
        return "meta", key
    raise DataError(f"invalid head selection: {head!r}")


def _cells_forward(params: NetworkParams, pmat: np.ndarray, x: np.ndarray, y: np.ndarray):
    if params.shared_cell:
        return _kernels.cell_forward(x, y, pmat, *params.cell().as_tuple())
    parts = [
        _kernels.cell_forward(x, y, pmat[j : j + 1], *params.cell(name).as_tuple())
        for j, name in enumerate(params.relation_names)
    ]
    return tuple(np.concatenate([p[i] for p in parts], axis=0) for i in range(4))


def _forward_full(params: NetworkParams, pmat: np.ndarray, x: np.ndarray, y: np.ndarray, head):
    _, head_key = _resolve_head(params, head)
    d = params.dim
    k = len(params.relation_names)
    n = x.shape[0]

    u1, u2, u3, u4 = _cells_forward(params, pmat, x, y)

    h = np.empty((n, 2 * k * d + 2 * d))
    for j in range(k):
        h[:, 2 * j * d : (2 * j + 1) * d] = u3[j]
        h[:, (2 * j + 1) * d : (2 * j + 2) * d] = u4[j]
    h[:, 2 * k * d : 2 * k * d + d] = x  # skip connections
    h[:, 2 * k * d + d :] = y

    t = np.tanh(h @ params.arrays["trunk.w"] + params.arrays["trunk.b"])
    logits = t @ params.arrays[head_key + ".w"] + params.arrays[head_key + ".b"]
    return u1, u2, u3, u4, h, t, logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def network_forward_batch(params: NetworkParams, protos: PrototypeSet, x, y, head="final"):
    """Logits and softmax probabilities for a batch of pairs; (B, classes)."""
    pmat = _check_protos(params, protos)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    *_, logits = _forward_full(params, pmat, x, y, head)
    return logits, softmax(logits)


def network_forward(params: NetworkParams, protos: PrototypeSet, x, y, head="final"):
    """Single-pair forward; returns 1-d (logits, probabilities)."""
    logits, probs = network_forward_batch(
        params, protos, np.asarray(x)[None, :], np.asarray(y)[None, :], head
    )
    return logits[0], probs[0]


def _active_weight_keys(params: NetworkParams, head_key: str) -> list[str]:
    keys = [k for k in params.arrays if k.startswith("cell.") and k.rsplit(".", 1)[1][0] == "w"]
    keys.append("trunk.w")
    keys.append(head_key + ".w")
    return keys


def batch_loss(params, protos, x, y, labels, head="final", l2: float = 0.0) -> float:
    """Summed cross-entropy of a batch plus l2 * ||W||^2 over active weights."""
    pmat = _check_protos(params, protos)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    *_, logits = _forward_full(params, pmat, x, y, head)
    probs = softmax(logits)
    picked = np.clip(probs[np.arange(len(labels)), labels], PROB_EPS, 1.0)
    loss = float(-np.log(picked).sum())
    if l2 > 0.0:
        _, head_key = _resolve_head(params, head)
        loss += l2 * sum(float((params.arrays[k] ** 2).sum())
                         for k in _active_weight_keys(params, head_key))
    return loss


def batch_loss_and_grads(params, protos, x, y, labels, head="final", l2: float = 0.0):
    """Loss of a batch and exact gradients for every parameter on the active
    path (cells, trunk, selected head). Prototypes and embeddings are
    constants, so no gradient block exists for them."""
    pmat = _check_protos(params, protos)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    _, head_key = _resolve_head(params, head)
    d = params.dim
    k = len(params.relation_names)
    n = x.shape[0]
    if n == 0:
        raise DataError("empty batch")

    u1, u2, u3, u4, h, t, logits = _forward_full(params, pmat, x, y, head)
    probs = softmax(logits)
    picked = np.clip(probs[np.arange(n), labels], PROB_EPS, 1.0)
    loss = float(-np.log(picked).sum())

    grads: dict[str, np.ndarray] = {}

    # head
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    grads[head_key + ".w"] = t.T @ dlogits
    grads[head_key + ".b"] = dlogits.sum(axis=0)

    # trunk
    dt = dlogits @ params.arrays[head_key + ".w"].T
    dzt = dt * (1.0 - t * t)
    grads["trunk.w"] = h.T @ dzt
    grads["trunk.b"] = dzt.sum(axis=0)
    dh = dzt @ params.arrays["trunk.w"].T

    # split the trunk adjoint back into per-cell u3/u4 blocks (the skip
    # slices feed constant embeddings, so they stop here)
    du3 = np.empty((k, n, d))
    du4 = np.empty((k, n, d))
    for j in range(k):
        du3[j] = dh[:, 2 * j * d : (2 * j + 1) * d]
        du4[j] = dh[:, (2 * j + 1) * d : (2 * j + 2) * d]

    def store_cell(prefix, out):
        for name, g in zip(("w1", "w2", "w3", "w4", "b1", "b2", "b3", "b4"), out):
            grads[prefix + name] = g

    if params.shared_cell:
        cell = params.cell()
        out = _kernels.cell_backward(
            x, y, pmat, cell.w1, cell.w2, cell.w3, cell.w4, u1, u2, u3, u4, du3, du4
        )
        store_cell("cell.", out)
    else:
        for j, name in enumerate(params.relation_names):
            cell = params.cell(name)
            out = _kernels.cell_backward(
                x, y, pmat[j : j + 1],
                cell.w1, cell.w2, cell.w3, cell.w4,
                u1[j : j + 1], u2[j : j + 1], u3[j : j + 1], u4[j : j + 1],
                du3[j : j + 1], du4[j : j + 1],
            )
            store_cell(f"cell.{name}.", out)

    if l2 > 0.0:
        for key in _active_weight_keys(params, head_key):
            w = params.arrays[key]
            loss += l2 * float((w**2).sum())
            grads[key] = grads[key] + 2.0 * l2 * w

    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter block {key!r}")
    return loss, grads


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: NetworkParams, protos: PrototypeSet) -> None:
    """Binary checkpoint: magic, length-prefixed JSON header, then raw
    C-order float64 bytes for the prototype matrix and each array in header
    order. Layout is fully deterministic for identical inputs."""
    header = {
        "format": 1,
        "dim": params.dim,
        "class_names": list(params.relation_set.names),
        "ran_name": params.relation_set.random_label.name
        if params.relation_set.random_label
        else None,
        "shared_cell": params.shared_cell,
        "proto_relations": list(protos.relation_names),
        "proto_counts": protos.source_counts,
        "arrays": [[k, list(params.arrays[k].shape)] for k in params.arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(protos.matrix, dtype="<f8").tobytes())
        for k in params.arrays:
            f.write(np.ascontiguousarray(params.arrays[k], dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[NetworkParams, PrototypeSet]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("format") != 1:
            raise DataError(f"{path}: unsupported checkpoint format {header.get('format')}")
        dim = header["dim"]
        ran = header["ran_name"]
        relation_set = RelationSet(
            RelationLabel(n, is_random=(n == ran)) for n in header["class_names"]
        )

        def read_array(shape):
            n = int(np.prod(shape)) if shape else 1
            buf = f.read(n * 8)
            if len(buf) != n * 8:
                raise DataError(f"{path}: truncated checkpoint")
            return np.frombuffer(buf, dtype="<f8").reshape(shape).copy()

        k = len(header["proto_relations"])
        pmat = read_array([k, dim])
        protos = PrototypeSet(dim, header["proto_relations"], pmat, header["proto_counts"])
        arrays = {key: read_array(shape) for key, shape in header["arrays"]}
    return NetworkParams(dim, relation_set, arrays, header["shared_cell"]), protos
