"""Server configuration and the retrieval-heads file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Startup-time configuration problem; the server must not come up."""


@dataclass(frozen=True)
class BridgeConfig:
    """What to load and what to expose.

    served_layers restricts which intermediate layers clients may request
    (None serves them all); it must be a subset of the model's depth.
    heads_path points to a JSON file {"model_id": str, "heads": [[layer,
    head], ...]} naming the attention heads a client may ask to mask.
    chat_template_id is advertised verbatim so clients flatten chat
    messages the way the checkpoint expects.
    """

    model_path: str
    device: str = "cpu"
    served_layers: tuple[int, ...] | None = None
    heads_path: str | None = None
    chat_template_id: str = "plain"


def load_heads_file(path: str | Path) -> tuple[str, list[tuple[int, int]]]:
    """Read a retrieval-heads file; structural problems name the entry."""
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"heads file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}")
    if "model_id" not in spec or "heads" not in spec:
        raise ConfigError(f"{path}: heads file needs model_id and heads")
    heads = []
    for i, entry in enumerate(spec["heads"]):
        if (not isinstance(entry, (list, tuple)) or len(entry) != 2
                or not all(isinstance(x, int) for x in entry)):
            raise ConfigError(f"{path}: heads[{i}] = {entry!r} is not [layer, head]")
        heads.append((entry[0], entry[1]))
    return str(spec["model_id"]), heads
