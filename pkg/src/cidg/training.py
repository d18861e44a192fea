"""Loss, AdamW, linear warmup/decay schedule, training loop, checkpoints.

The batch loss is the mean over pairs of each pair's token-mean NLL, so
duplicating a pair leaves gradients unchanged. Weight decay is decoupled and
applies to attention/feed-forward matrices only (not embeddings, biases, or
norm parameters). Training is single-threaded and fully seeded: one generator
drives the epoch shuffle and the per-example case draws, which is what makes
checkpoints byte-reproducible.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import InstructionTriplet, LabeledExample
from .model import (
    ModelConfig,
    ModelParams,
    _tensor_inventory,
    backward_batch,
    decayed_tensors,
    forward_batch,
)
from .taskformat import SeqPair, format_case, format_instgen, sample_case
from .tokenizer import BOS, PAD, Vocabulary

CHECKPOINT_MAGIC = b"CIDG"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class NotACheckpointError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    epochs: int = 40
    batch_size: int = 32
    warmup_ratio: float = 0.03
    weight_decay: float = 1e-6
    adam_eps: float = 1e-8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    grad_clip_norm: float = 1.0
    max_src_len: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.warmup_ratio < 1.0:
            raise ValueError("warmup_ratio must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class OptimizerState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def init(cls, params: ModelParams) -> "OptimizerState":
        return cls(
            step=0,
            m={k: np.zeros_like(t) for k, t in params.tensors.items()},
            v={k: np.zeros_like(t) for k, t in params.tensors.items()},
        )


@dataclass
class Checkpoint:
    version: int
    model_config: ModelConfig
    train_config: TrainConfig
    vocab: Vocabulary
    params: ModelParams
    metadata: dict


def nll_loss(logits: np.ndarray, target: Sequence[int], pad_id: int = PAD) -> float:
    """Mean over non-PAD positions of -log softmax(logits_j)[target_j]."""
    target = np.asarray(target, dtype=np.int64)
    if logits.shape[0] != target.shape[0]:
        raise ValueError("logits rows must match target length")
    n = int((target != pad_id).sum())
    if n == 0:
        raise ValueError("target contains no non-PAD token")
    losses, _ = kernels.cross_entropy_fwd_bwd(np.ascontiguousarray(logits), target, pad_id)
    return float(losses.sum(dtype=np.float64)) / n


@dataclass
class GradResult:
    loss: float  # mean over pairs of per-pair token-mean NLL
    grads: dict[str, np.ndarray]
    token_nll_sum: float
    token_count: int


def _assemble_batch(batch: Sequence[SeqPair]):
    B = len(batch)
    S = max(len(p.source) for p in batch)
    T = max(len(p.target) for p in batch)
    src = np.full((B, S), PAD, dtype=np.int64)
    tgt_in = np.full((B, T), PAD, dtype=np.int64)
    tgt_out = np.full((B, T), PAD, dtype=np.int64)
    for b, pair in enumerate(batch):
        src[b, : len(pair.source)] = pair.source
        tgt_in[b, 0] = BOS
        tgt_in[b, 1 : len(pair.target)] = pair.target[:-1]
        tgt_out[b, : len(pair.target)] = pair.target
    return src, tgt_in, tgt_out


def compute_grads(
    params: ModelParams,
    batch: Sequence[SeqPair],
    dtype=np.float32,
    dropout_rng: np.random.Generator | None = None,
) -> GradResult:
    """Exact gradients of the batch-mean loss for every parameter tensor."""
    if not batch:
        raise ValueError("batch is empty")
    for pair in batch:
        if not pair.target:
            raise ValueError("cannot train on an inference pair (empty target)")
    src, tgt_in, tgt_out = _assemble_batch(batch)
    B, T = tgt_out.shape
    cache: dict = {}
    logits = forward_batch(params, src, tgt_in, dtype=dtype, cache=cache, dropout_rng=dropout_rng)
    V = logits.shape[2]
    flat_logits = np.ascontiguousarray(logits.reshape(B * T, V))
    losses, dflat = kernels.cross_entropy_fwd_bwd(flat_logits, tgt_out.reshape(-1), PAD)
    if not np.all(np.isfinite(losses)):
        bad_row = int(np.flatnonzero(~np.isfinite(losses))[0])
        raise NonFiniteLossError(f"non-finite loss at pair {bad_row // T} of the batch")
    n_tok = np.array([len(p.target) for p in batch], dtype=np.float64)
    weights = np.repeat(1.0 / (B * n_tok), T).astype(logits.dtype)
    loss = float((losses.astype(np.float64) * weights).sum())
    dlogits = (dflat * weights[:, None]).reshape(B, T, V)
    grads = backward_batch(params, cache, dlogits, dtype=dtype)
    return GradResult(
        loss=loss,
        grads=grads,
        token_nll_sum=float(losses.sum(dtype=np.float64)),
        token_count=int(n_tok.sum()),
    )


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak rate, then linear decay to zero at total_steps."""
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    peak = cfg.learning_rate
    # ceil guarantees >= 1 warmup step for any nonzero ratio; clamp keeps a decay phase
    warmup = min(math.ceil(cfg.warmup_ratio * total_steps), total_steps - 1)
    if step < warmup:
        return peak * step / warmup
    return peak * (total_steps - step) / (total_steps - warmup)


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.sum(np.square(g, dtype=np.float64)))
    return math.sqrt(total)


def adamw_step(
    state: OptimizerState,
    params: ModelParams,
    grads: dict[str, np.ndarray],
    lr_t: float,
    cfg: TrainConfig,
) -> None:
    """One in-place update: clip -> decoupled decay -> Adam moments -> step."""
    if set(grads) != set(params.tensors):
        raise ValueError("gradient tensors do not match parameter tensors")
    scale = 1.0
    if cfg.grad_clip_norm > 0:
        norm = global_grad_norm(grads)
        if norm > cfg.grad_clip_norm:
            scale = cfg.grad_clip_norm / norm
    state.step += 1
    decay_set = decayed_tensors(params.config)
    for name, p in params.tensors.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        g = g.astype(p.dtype, copy=False)
        if scale != 1.0:
            g = g * scale
        wd = cfg.weight_decay if name in decay_set else 0.0
        kernels.adamw_update(
            p.reshape(-1),
            np.ascontiguousarray(g.reshape(-1)),
            state.m[name].reshape(-1),
            state.v[name].reshape(-1),
            lr_t,
            cfg.adam_beta1,
            cfg.adam_beta2,
            cfg.adam_eps,
            wd,
            state.step,
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[float] = field(default_factory=list)  # per-epoch token-mean NLL
    case_counts: dict = field(default_factory=dict)
    pairs_consumed: int = 0


def _format_example(item, mode: str, vocab: Vocabulary, max_src_len: int, rng) -> SeqPair:
    if isinstance(item, InstructionTriplet):
        return format_instgen(item.input, item.output, item.instruction, vocab, max_src_len)
    if isinstance(item, LabeledExample):
        case = sample_case(rng, mode)
        return format_case(item, case, vocab, max_src_len)
    raise TypeError(f"cannot train on {type(item).__name__}")


def train(
    params: ModelParams,
    dataset: Sequence[LabeledExample | InstructionTriplet],
    cfg: TrainConfig,
    mode: str = "full",
    vocab: Vocabulary | None = None,
) -> TrainResult:
    """Seeded multi-task training; one formatted pair per example per epoch."""
    if not dataset:
        raise ValueError("dataset is empty")
    if vocab is None:
        raise ValueError("a vocabulary is required")
    rng = np.random.default_rng(cfg.seed)
    dropout_rng = rng if params.config.dropout > 0 else None
    n = len(dataset)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    state = OptimizerState.init(params)
    history: list[float] = []
    case_counts: dict = {}
    pairs_consumed = 0

    for _epoch in range(cfg.epochs):
        order = np.arange(n)
        rng.shuffle(order)
        epoch_nll = 0.0
        epoch_tokens = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = []
            for i in idx:
                pair = _format_example(dataset[int(i)], mode, vocab, cfg.max_src_len, rng)
                key = pair.case.value if hasattr(pair.case, "value") else pair.case
                case_counts[key] = case_counts.get(key, 0) + 1
                batch.append(pair)
            pairs_consumed += len(batch)
            result = compute_grads(params, batch, dropout_rng=dropout_rng)
            lr_t = lr_at(state.step + 1, total_steps, cfg)
            adamw_step(state, params, result.grads, lr_t, cfg)
            epoch_nll += result.token_nll_sum
            epoch_tokens += result.token_count
        history.append(epoch_nll / epoch_tokens)

    ckpt = Checkpoint(
        version=CHECKPOINT_VERSION,
        model_config=params.config,
        train_config=cfg,
        vocab=vocab,
        params=params,
        metadata={
            "seed": cfg.seed,
            "epochs_completed": cfg.epochs,
            "final_loss": history[-1] if history else None,
            "mode": mode,
        },
    )
    return TrainResult(
        checkpoint=ckpt, history=history, case_counts=case_counts, pairs_consumed=pairs_consumed
    )


# ---------------------------------------------------------------------------
# checkpoint persistence


def _write_u32(fh, value: int):
    fh.write(struct.pack("<I", value))


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint file")
    return data


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    header = json.dumps(
        {
            "model_config": asdict(ckpt.model_config),
            "train_config": asdict(ckpt.train_config),
            "metadata": ckpt.metadata,
        },
        ensure_ascii=False,
    )
    blob = (header + "\n" + "\n".join(ckpt.vocab.tokens) + "\n").encode("utf-8")
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    _write_u32(buf, ckpt.version)
    _write_u32(buf, len(blob))
    buf.write(blob)
    for name, tensor in ckpt.params.tensors.items():
        encoded = name.encode("utf-8")
        _write_u32(buf, len(encoded))
        buf.write(encoded)
        _write_u32(buf, tensor.ndim)
        for dim in tensor.shape:
            _write_u32(buf, dim)
        buf.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise NotACheckpointError(f"{path}: not a checkpoint (bad magic bytes)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != CHECKPOINT_VERSION:
            raise UnsupportedVersionError(f"unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4))
        blob = _read_exact(fh, blob_len).decode("utf-8")
        header_line, _, vocab_text = blob.partition("\n")
        header = json.loads(header_line)
        model_config = ModelConfig(**header["model_config"])
        train_config = TrainConfig(**header["train_config"])
        vocab = Vocabulary(tokens=tuple(vocab_text.splitlines()))
        tensors: dict[str, np.ndarray] = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            if len(raw) != 4:
                raise CheckpointError("truncated checkpoint file")
            (name_len,) = struct.unpack("<I", raw)
            name = _read_exact(fh, name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(fh, 4 * count), dtype="<f4")
            tensors[name] = data.reshape(shape).astype(np.float32)
    params = ModelParams(config=model_config, tensors=tensors)
    _validate_shapes(params)
    if len(vocab) != model_config.vocab_size:
        raise CheckpointError(
            f"vocabulary size {len(vocab)} does not match config vocab_size {model_config.vocab_size}"
        )
    return Checkpoint(
        version=version,
        model_config=model_config,
        train_config=train_config,
        vocab=vocab,
        params=params,
        metadata=header["metadata"],
    )


def _validate_shapes(params: ModelParams):
    expected = {name: shape for name, shape, _ in _tensor_inventory(params.config)}
    if set(expected) != set(params.tensors):
        missing = set(expected) - set(params.tensors)
        extra = set(params.tensors) - set(expected)
        raise CheckpointError(f"tensor set mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
    for name, shape in expected.items():
        if params.tensors[name].shape != shape:
            raise CheckpointError(
                f"{name}: shape {params.tensors[name].shape} does not match config {shape}"
            )
