"""Versioned binary checkpoints.

Layout: a text header (magic + format version, then a section table of
byte offsets) followed by raw little-endian section payloads. Nothing uses
language-native object serialization, so a checkpoint is a portable,
byte-stable artifact: save -> load -> save reproduces the file exactly.

Sections: `meta` (JSON: phase tag, configs, RNG state, metrics cursor),
`vocab` (the line-oriented vocabulary format), `gen`/`disc` (named float64
arrays), `gen_opt`/`disc_opt` (Adam moments and counters).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import Vocabulary
from .discriminator import DiscriminatorConfig, DiscriminatorModel
from .errors import CheckpointError
from .generator import GeneratorConfig, GeneratorModel
from .optim import AdamState

MAGIC = b"VERSEGAN-CKPT"
FORMAT_VERSION = 1
PHASES = ("pretrained", "finetuned", "gan")


# ---------------------------------------------------------------------------
# named-array blobs


def _write_arrays(named: list[tuple[str, np.ndarray]]) -> bytes:
    out = [struct.pack("<I", len(named))]
    for name, arr in named:
        arr = np.ascontiguousarray(arr, dtype=np.float64)
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    return b"".join(out)


def _read_arrays(buf: bytes) -> dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointError("truncated array section")
        piece = view[pos:pos + n]
        pos += n
        return piece

    (count,) = struct.unpack("<I", take(4))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = bytes(take(name_len)).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape)
        arrays[name] = data.copy()
    return arrays


def _write_adam(state: AdamState, param_names: list[str]) -> bytes:
    head = struct.pack("<Qdddd", state.step_count, state.learning_rate,
                       state.beta1, state.beta2, state.epsilon)
    named = [(f"m.{n}", a) for n, a in zip(param_names, state.first_moment)]
    named += [(f"v.{n}", a) for n, a in zip(param_names, state.second_moment)]
    return head + _write_arrays(named)


def _read_adam(buf: bytes, param_names: list[str]) -> AdamState:
    step, lr, b1, b2, eps = struct.unpack("<Qdddd", buf[:40])
    arrays = _read_arrays(buf[40:])
    try:
        first = [arrays[f"m.{n}"] for n in param_names]
        second = [arrays[f"v.{n}"] for n in param_names]
    except KeyError as missing:
        raise CheckpointError(f"optimizer state missing {missing}") from None
    return AdamState(first_moment=first, second_moment=second, step_count=step,
                     beta1=b1, beta2=b2, epsilon=eps, learning_rate=lr)


# ---------------------------------------------------------------------------
# save / load


@dataclass
class Checkpoint:
    format_version: int
    phase: str
    vocab: Vocabulary
    generator: GeneratorModel
    gen_opt_state: AdamState | None
    discriminator: DiscriminatorModel | None
    disc_opt_state: AdamState | None
    train_config: dict | None
    rng_state: dict | None
    metrics_cursor: int


def save_checkpoint(path, phase: str, generator: GeneratorModel,
                    vocab: Vocabulary, gen_opt_state: AdamState | None = None,
                    discriminator: DiscriminatorModel | None = None,
                    disc_opt_state: AdamState | None = None,
                    train_config: dict | None = None,
                    rng_state: dict | None = None,
                    metrics_cursor: int = 0) -> None:
    if phase not in PHASES:
        raise CheckpointError(f"unknown phase tag {phase!r}; expected one of {PHASES}")
    meta = {
        "format_version": FORMAT_VERSION,
        "phase": phase,
        "generator_config": asdict(generator.config),
        "discriminator_config": None if discriminator is None else {
            "encoder": asdict(discriminator.config.encoder),
            "freeze_encoder": discriminator.config.freeze_encoder,
        },
        "train_config": train_config,
        "rng_state": rng_state,
        "metrics_cursor": int(metrics_cursor),
    }
    sections: list[tuple[str, bytes]] = [
        ("meta", json.dumps(meta, sort_keys=True,
                            separators=(",", ":")).encode("utf-8")),
        ("vocab", vocab.to_bytes()),
        ("gen", _write_arrays([(n, t.data) for n, t in generator.parameters()])),
    ]
    if gen_opt_state is not None:
        sections.append(("gen_opt", _write_adam(
            gen_opt_state, [n for n, _ in generator.parameters()])))
    if discriminator is not None:
        named = [(n, t.data) for n, t in discriminator.parameters()]
        named += [(f"buffer.{n}", a) for n, a in discriminator.buffers()]
        sections.append(("disc", _write_arrays(named)))
        if disc_opt_state is not None:
            names = [n for n, _ in discriminator.parameters()]
            if discriminator.config.freeze_encoder:
                names = [n for n, _ in discriminator.head_parameters()]
            sections.append(("disc_opt", _write_adam(disc_opt_state, names)))

    offset = 0
    table = []
    for name, payload in sections:
        table.append(f"section {name} {offset} {len(payload)}")
        offset += len(payload)
    header = (MAGIC.decode() + f" {FORMAT_VERSION}\n"
              + "\n".join(table) + "\nend\n").encode("ascii")
    Path(path).write_bytes(header + b"".join(p for _, p in sections))


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    newline = raw.find(b"\n")
    if newline < 0 or not raw.startswith(MAGIC + b" "):
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = int(raw[len(MAGIC) + 1:newline])
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint format_version {version} "
            f"(this build reads {FORMAT_VERSION})")
    pos = newline + 1
    table: dict[str, tuple[int, int]] = {}
    while True:
        end = raw.find(b"\n", pos)
        if end < 0:
            raise CheckpointError(f"{path}: truncated header")
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line == "end":
            break
        kind, name, off, size = line.split()
        if kind != "section":
            raise CheckpointError(f"{path}: malformed header line {line!r}")
        table[name] = (int(off), int(size))
    data_start = pos

    def section(name: str) -> bytes:
        off, size = table[name]
        return raw[data_start + off:data_start + off + size]

    for required in ("meta", "vocab", "gen"):
        if required not in table:
            raise CheckpointError(f"{path}: missing section {required!r}")

    meta = json.loads(section("meta").decode("utf-8"))
    phase = meta["phase"]
    if phase not in PHASES:
        raise CheckpointError(f"{path}: unknown phase tag {phase!r}")
    vocab = Vocabulary.from_bytes(section("vocab"))

    gen_config = GeneratorConfig(**meta["generator_config"])
    generator = GeneratorModel(gen_config, np.random.default_rng(0))
    arrays = _read_arrays(section("gen"))
    _assign(generator.parameters(), arrays, "generator")
    gen_names = [n for n, _ in generator.parameters()]

    gen_opt = (_read_adam(section("gen_opt"), gen_names)
               if "gen_opt" in table else None)

    discriminator = None
    disc_opt = None
    if meta.get("discriminator_config") is not None:
        dc = meta["discriminator_config"]
        disc_config = DiscriminatorConfig(
            encoder=GeneratorConfig(**dc["encoder"]),
            freeze_encoder=dc["freeze_encoder"])
        discriminator = DiscriminatorModel(disc_config, np.random.default_rng(0))
        disc_arrays = _read_arrays(section("disc"))
        _assign(discriminator.parameters(), disc_arrays, "discriminator")
        for name, buf in discriminator.buffers():
            key = f"buffer.{name}"
            if key not in disc_arrays:
                raise CheckpointError(f"discriminator buffer {name!r} missing")
            buf[...] = disc_arrays[key]
        if "disc_opt" in table:
            names = [n for n, _ in (discriminator.head_parameters()
                                    if disc_config.freeze_encoder
                                    else discriminator.parameters())]
            disc_opt = _read_adam(section("disc_opt"), names)

    return Checkpoint(format_version=version, phase=phase, vocab=vocab,
                      generator=generator, gen_opt_state=gen_opt,
                      discriminator=discriminator, disc_opt_state=disc_opt,
                      train_config=meta.get("train_config"),
                      rng_state=meta.get("rng_state"),
                      metrics_cursor=meta.get("metrics_cursor", 0))


def _assign(named_params, arrays: dict[str, np.ndarray], what: str) -> None:
    for name, tensor in named_params:
        if name not in arrays:
            raise CheckpointError(f"{what} parameter {name!r} missing from checkpoint")
        if arrays[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"{what} parameter {name!r}: shape {arrays[name].shape} "
                f"does not match model {tensor.data.shape}")
        tensor.data[...] = arrays[name]


def rng_state_to_json(rng: np.random.Generator) -> dict:
    """Serializable snapshot of a numpy Generator's bit-generator state."""
    return json.loads(json.dumps(rng.bit_generator.state))


def rng_from_json(state: dict) -> np.random.Generator:
    rng = np.random.default_rng(0)
    rng.bit_generator.state = state
    return rng
