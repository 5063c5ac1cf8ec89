"""Run directories: lock file, config echo, metrics log, samples, checkpoints.

Each training invocation owns one directory. The metrics log is an
append-only line-delimited JSON file with a fixed record schema, written
without timestamps so identically-seeded runs produce byte-identical logs.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .errors import VerseganError

METRICS_FIELDS = ("phase", "epoch", "step", "loss", "perplexity",
                  "disc_accuracy", "mean_reward", "seed")

ENV_OUTPUT_ROOT = "VERSEGAN_RUNS"


def output_root() -> Path:
    return Path(os.environ.get(ENV_OUTPUT_ROOT, "runs"))


class MetricsLog:
    """Append-only JSONL metrics writer with a fixed field order."""

    def __init__(self, path: Path):
        self.path = Path(path)

    def log(self, phase: str, epoch: int, step: int, loss=None, perplexity=None,
            disc_accuracy=None, mean_reward=None, seed=None) -> None:
        record = {"phase": phase, "epoch": int(epoch), "step": int(step),
                  "loss": _jsonable(loss), "perplexity": _jsonable(perplexity),
                  "disc_accuracy": _jsonable(disc_accuracy),
                  "mean_reward": _jsonable(mean_reward),
                  "seed": None if seed is None else int(seed)}
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")


def _jsonable(value):
    return None if value is None else float(value)


def read_metrics(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


class RunContext:
    """One output directory per run, guarded by a lock file."""

    def __init__(self, run_dir):
        self.dir = Path(run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = self.dir / ".lock"
        try:
            fd = os.open(self._lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            os.close(fd)
        except FileExistsError:
            raise VerseganError(
                f"run directory {self.dir} is locked by another invocation "
                f"(remove {self._lock} if that run is dead)") from None
        (self.dir / "checkpoints").mkdir(exist_ok=True)
        self.metrics = MetricsLog(self.dir / "metrics.jsonl")

    def echo_config(self, settings: dict) -> None:
        """Write the fully-resolved configuration in re-loadable form."""
        lines = [f"{key} = {_format_value(val)}"
                 for key, val in settings.items() if val is not None]
        (self.dir / "config.echo").write_text("\n".join(lines) + "\n",
                                              encoding="utf-8")

    def checkpoint_path(self, tag: str) -> Path:
        return self.dir / "checkpoints" / f"{tag}.ckpt"

    def write_samples(self, name: str, texts: list[str]) -> Path:
        path = self.dir / f"{name}.txt"
        path.write_text("\n\n".join(texts) + "\n", encoding="utf-8")
        return path

    def close(self) -> None:
        if self._lock.exists():
            self._lock.unlink()

    def __enter__(self) -> "RunContext":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def _format_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    return str(val)
