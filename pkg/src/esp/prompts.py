"""Plain-text prompt templates with ``{slot}`` placeholders.

Templates embed literal JSON, so slots are substituted by name instead of
going through ``str.format``.
"""

from __future__ import annotations

from importlib import resources


def load_template(name_or_path: str) -> str:
    """Read a bundled template by short name (``"planner"``) or any file path."""
    if "/" in name_or_path or name_or_path.endswith(".txt"):
        with open(name_or_path, encoding="utf-8") as fh:
            return fh.read()
    return resources.files("esp.data").joinpath("prompts", f"{name_or_path}.txt").read_text("utf-8")


def missing_slots(template: str, slots) -> list[str]:
    return [s for s in slots if "{" + s + "}" not in template]


def fill(template: str, **values: str) -> str:
    out = template
    for key, val in values.items():
        out = out.replace("{" + key + "}", val)
    return out
