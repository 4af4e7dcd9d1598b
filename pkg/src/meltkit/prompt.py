"""Deterministic rendering of the annotation prompt.

The instruction block lives in a versioned asset file so prompt revisions
stay diffable; only the final dialogue line varies per utterance.
"""

from __future__ import annotations

import hashlib
import importlib.resources
import re
from dataclasses import dataclass
from functools import lru_cache

from .corpus import Utterance

TEMPLATE_ASSET = "annotation_prompt_v1.txt"

# Rendered dialogue line, quoted as in the instruction block's format
# description. Non-greedy speaker so text containing the pattern itself
# cannot swallow the real coordinates.
DIALOGUE_LINE_RE = re.compile(r'^"(.+?) at s(\d+)e(\d+) said: (.*)"$')


class PromptRenderError(ValueError):
    pass


@dataclass(frozen=True)
class PromptText:
    body: str
    digest: str


@lru_cache(maxsize=1)
def instruction_block() -> str:
    return (
        importlib.resources.files("meltkit.assets")
        .joinpath(TEMPLATE_ASSET)
        .read_text(encoding="utf-8")
    )


def render_dialogue_line(speaker: str, season: int, episode: int, text: str) -> str:
    return f'"{speaker} at s{season}e{episode} said: {text}"'


def build_prompt(u: Utterance) -> PromptText:
    """Render the full prompt for one utterance.

    The body is the fixed instruction block followed by the quoted
    dialogue line. Rendering is byte-deterministic, so the digest
    identifies the prompt for caching.

    Raises:
        PromptRenderError: empty speaker/text, season or episode < 1, or
            a newline in speaker/text (which would break the one-line
            dialogue format; embedded double quotes do not, and pass
            through verbatim).
    """
    if not u.speaker.strip():
        raise PromptRenderError("speaker must be non-empty")
    if not u.text.strip():
        raise PromptRenderError("text must be non-empty")
    if u.season < 1 or u.episode < 1:
        raise PromptRenderError(f"season/episode must be >= 1, got s{u.season}e{u.episode}")
    if "\n" in u.speaker or "\r" in u.speaker or "\n" in u.text or "\r" in u.text:
        raise PromptRenderError("newlines would break the single-line dialogue format")

    line = render_dialogue_line(u.speaker, u.season, u.episode, u.text)
    body = instruction_block() + "\n" + line + "\n"
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return PromptText(body=body, digest=digest)


def parse_dialogue_line(body: str) -> tuple[str, int, int, str]:
    """Recover (speaker, season, episode, text) from a rendered prompt.

    Round-trips exactly for any utterance whose speaker does not contain
    the literal " said: " separator. The instruction block's own format
    description never matches because its season/episode slots are not
    digits.
    """
    matches = [m for line in body.splitlines() if (m := DIALOGUE_LINE_RE.match(line))]
    if not matches:
        raise PromptRenderError("no dialogue line found in prompt body")
    m = matches[-1]
    return m.group(1), int(m.group(2)), int(m.group(3)), m.group(4)
