"""Minimal SGF FF[4] reader/writer for single-line game records."""
from __future__ import annotations

import re
from dataclasses import dataclass, field


class SgfError(ValueError):
    pass


_COORDS = "abcdefghijklmnopqrs"


def point_to_sgf(col: int, row: int) -> str:
    return _COORDS[col] + _COORDS[row]


def sgf_to_point(s: str) -> tuple[int, int]:
    if len(s) != 2 or s[0] not in _COORDS or s[1] not in _COORDS:
        raise SgfError(f"bad point {s!r}")
    return _COORDS.index(s[0]), _COORDS.index(s[1])


@dataclass
class SgfGame:
    size: int = 19
    root: dict = field(default_factory=dict)  # property -> list of values
    moves: list = field(default_factory=list)  # (color 'B'/'W', (col,row)|None, comment|None)
    setup_black: list = field(default_factory=list)
    setup_white: list = field(default_factory=list)


def _tokenize(text: str):
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in "();":
            yield ch, None
            i += 1
        elif ch.isspace():
            i += 1
        elif ch.isalpha():
            m = re.match(r"[A-Za-z]+", text[i:])
            ident = "".join(c for c in m.group(0) if c.isupper())
            i += m.end()
            values = []
            while i < n and (text[i] == "[" or text[i].isspace()):
                if text[i].isspace():
                    i += 1
                    continue
                j = i + 1
                buf = []
                while j < n:
                    if text[j] == "\\" and j + 1 < n:
                        buf.append(text[j + 1])
                        j += 2
                    elif text[j] == "]":
                        break
                    else:
                        buf.append(text[j])
                        j += 1
                else:
                    raise SgfError("unterminated property value")
                values.append("".join(buf))
                i = j + 1
            if not values:
                raise SgfError(f"property {ident} without value")
            yield ident, values
        else:
            raise SgfError(f"unexpected character {ch!r}")


def parse_sgf(text: str) -> SgfGame:
    """Parse the main line of a single SGF game tree."""
    game = SgfGame()
    depth = 0
    node_props: dict | None = None
    nodes: list[dict] = []
    took_branch = False
    for kind, values in _tokenize(text):
        if kind == "(":
            depth += 1
            if depth > 1 and took_branch:
                break  # only the first (main) branch is followed
            took_branch = True
        elif kind == ")":
            depth -= 1
            if depth <= 0:
                break
        elif kind == ";":
            node_props = {}
            nodes.append(node_props)
        else:
            if node_props is None:
                raise SgfError("property outside a node")
            node_props.setdefault(kind, []).extend(values)
    if not nodes:
        raise SgfError("no nodes found")
    root = nodes[0]
    game.root = {k: v for k, v in root.items() if k not in ("B", "W")}
    if "SZ" in root:
        game.size = int(root["SZ"][0])
    for p in root.get("AB", []):
        game.setup_black.append(sgf_to_point(p))
    for p in root.get("AW", []):
        game.setup_white.append(sgf_to_point(p))
    start = 1
    if "B" in root or "W" in root:
        start = 0  # move merged into the root node
    for node in nodes[start:]:
        comment = node.get("C", [None])[0]
        for color in ("B", "W"):
            if color in node:
                v = node[color][0]
                pt = None if v in ("", "tt") else sgf_to_point(v)
                game.moves.append((color, pt, comment))
    return game


def _esc(value: str) -> str:
    return value.replace("\\", "\\\\").replace("]", "\\]")


def serialize_sgf(game: SgfGame) -> str:
    """Well-formed FF[4] text with one node per move."""
    parts = ["(;FF[4]GM[1]", f"SZ[{game.size}]"]
    for key, values in game.root.items():
        if key in ("FF", "GM", "SZ", "AB", "AW"):
            continue
        for v in values:
            parts.append(f"{key}[{_esc(str(v))}]")
    if game.setup_black:
        parts.append("AB" + "".join(f"[{point_to_sgf(*p)}]" for p in game.setup_black))
    if game.setup_white:
        parts.append("AW" + "".join(f"[{point_to_sgf(*p)}]" for p in game.setup_white))
    for color, pt, comment in game.moves:
        coord = "" if pt is None else point_to_sgf(*pt)
        node = f";{color}[{coord}]"
        if comment:
            node += f"C[{_esc(comment)}]"
        parts.append(node)
    parts.append(")")
    return "".join(parts)
