"""Prompt assets: per-framework instructions, few-shot exemplars, epilogues.

Assets are plain-text files bundled with the package. Exemplar files
hold one exemplar per block, separated by a line of exactly ``###``.
Profiles use at most seven exemplars; the files carry every available
one.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

FRAMEWORKS = ("direct", "oner", "react")
MAX_EXEMPLARS = 7


def _read(name: str) -> str:
    return (resources.files(__package__) / "assets" / name).read_text(encoding="utf-8")


def _split_exemplars(raw: str) -> list[str]:
    blocks, current = [], []
    for line in raw.splitlines():
        if line.strip() == "###":
            blocks.append("\n".join(current).strip("\n"))
            current = []
        else:
            current.append(line)
    blocks.append("\n".join(current).strip("\n"))
    return [b for b in blocks if b]


@dataclass(frozen=True)
class PromptBundle:
    instructions: str
    exemplars: tuple[str, ...]
    epilogue: str | None


def load_bundle(framework: str, *, lookup_enabled: bool = False,
                llama_epilogue: bool = False) -> PromptBundle:
    if framework not in FRAMEWORKS:
        raise ValueError(f"unknown framework: {framework!r}")
    if framework == "react":
        name = "react_instructions_lookup.txt" if lookup_enabled else "react_instructions_nolookup.txt"
        instructions = _read(name)
        exemplars = _split_exemplars(_read("react_examples.txt"))
    else:
        instructions = _read(f"{framework}_instructions.txt")
        exemplars = _split_exemplars(_read(f"{framework}_examples.txt"))
    epilogue = _read(f"epilogue_{framework}_llama.txt").strip() if llama_epilogue else None
    return PromptBundle(
        instructions=instructions.strip(),
        exemplars=tuple(exemplars[:MAX_EXEMPLARS]),
        epilogue=epilogue,
    )


def system_prompt(bundle: PromptBundle) -> str:
    """Instructions, exemplar block, and optional epilogue as one string."""
    parts = [bundle.instructions, *bundle.exemplars]
    if bundle.epilogue:
        parts.append(bundle.epilogue)
    return "\n\n".join(parts)
