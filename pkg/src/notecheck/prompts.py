"""Prompt template loading and rendering.

Templates live as editable text files (one per exchange) either in the
packaged prompts/ directory or in a user-supplied directory. Rendering
substitutes literal "{name}" markers; clinical text containing braces
passes through untouched.
"""

from __future__ import annotations

from pathlib import Path

from .errors import DataError

PACKAGED_DIR = Path(__file__).parent / "prompts"

TEMPLATE_NAMES = (
    "baseline_system", "baseline_user",
    "proposer_system", "proposer_user",
    "assigner_system", "assigner_user",
    "rewriter_system", "rewriter_user",
    "polarity_check_system", "polarity_check_user",
    "polarity_rewrite_system", "polarity_rewrite_user",
    "merge_system", "merge_user",
    "tagging_system", "tagging_user",
    "judge_system", "judge_user",
)

# Appended to the user message when a reply could not be parsed and the
# exchange is retried (the changed prompt also defeats the cache).
STRICT_RETRY_SUFFIX = (
    "\n\nYour previous reply could not be parsed. "
    "Reply with exactly one word: Yes or No."
)
STRICT_LIST_RETRY_SUFFIX = (
    "\n\nYour previous reply could not be parsed. "
    "Reply with only a JSON-style list of item numbers, e.g. [1, 3], or [] for none."
)


class PromptLibrary:
    """Loads templates by name, falling back to the packaged defaults."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in self._cache:
            if name not in TEMPLATE_NAMES:
                raise DataError(f"unknown prompt template {name!r}")
            path = None
            if self.directory is not None:
                candidate = self.directory / f"{name}.txt"
                if candidate.exists():
                    path = candidate
            if path is None:
                path = PACKAGED_DIR / f"{name}.txt"
            if not path.exists():
                raise DataError(f"prompt template file missing: {path}")
            self._cache[name] = path.read_text(encoding="utf-8").strip("\n")
        return self._cache[name]

    def render(self, name: str, **substitutions: str) -> str:
        text = self.get(name)
        for key, value in substitutions.items():
            marker = "{" + key + "}"
            if marker not in text:
                raise DataError(f"template {name!r} has no {marker} placeholder")
            text = text.replace(marker, str(value))
        return text
