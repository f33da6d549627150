"""Observation symbol names.

Models use ASCII identifiers internally (``_``, ``bot``, ``top``, ``~0``,
``sA``...) so reports survive plain-text pipelines; :func:`pretty` gives the
Unicode rendering shown next to them.
"""

BLANK = "_"
BOT = "bot"
TOP = "top"
SUITS = ("sA", "sB", "sC", "sD")

_UNICODE = {
    BLANK: "⊘",
    BOT: "⊥",
    TOP: "⊤",
    "sA": "♠",
    "sB": "♥",
    "sC": "♦",
    "sD": "♣",
}
_ASCII = {v: k for k, v in _UNICODE.items()}
_COMBINING_TILDE = "̃"


def tilde(i: int) -> str:
    return f"~{i}"


def pretty(symbol: str) -> str:
    if symbol in _UNICODE:
        return _UNICODE[symbol]
    if symbol.startswith("~"):
        return symbol[1:] + _COMBINING_TILDE
    return symbol


def normalize(symbol: str) -> str:
    """Map a Unicode rendering back to its ASCII identifier; ASCII passes through."""
    if symbol in _ASCII:
        return _ASCII[symbol]
    if symbol.endswith(_COMBINING_TILDE):
        return "~" + symbol[: -len(_COMBINING_TILDE)]
    return symbol


def pretty_sequence(seq) -> str:
    return "[" + ",".join(pretty(s) for s in seq) + "]"
