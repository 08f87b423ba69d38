"""Legal Go board, move list, capture handling and SGF export.

The capture-handling rules implemented here: captured groups leave the
internal board the instant the killing stone is recorded; a stale stone
re-detected on a just-captured point rides along as a provisional move
and is cleaned up either by the last-move false-positive rule or by
`replace_last_if_vanished` when the real next move shows up.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import sgf

EMPTY, BLACK, WHITE = 0, 1, 2

_COLOR_CH = {EMPTY: ".", BLACK: "B", WHITE: "W"}
_SGF_COLOR = {BLACK: "B", WHITE: "W"}


def opponent(color: int) -> int:
    return BLACK if color == WHITE else WHITE


class IllegalMoveError(ValueError):
    pass


class OccupiedError(IllegalMoveError):
    pass


@dataclass
class MoveRecord:
    number: int  # 1-based
    color: int
    point: tuple[int, int]  # (col, row)
    frame: int = 0
    flags: set = field(default_factory=set)  # {"late-inserted", "order-warning", "replaced"}
    captured: list = field(default_factory=list)  # [((col, row), color), ...]


@dataclass
class GameMeta:
    black_name: str = ""
    white_name: str = ""
    black_rank: str = ""
    white_rank: str = ""
    event: str = ""
    rules: str = "Japanese"
    komi: float = 6.5
    size: int = 19
    date: str = ""


@dataclass(frozen=True)
class DetectionEvent:
    point: tuple[int, int]
    color: int
    frame: int = 0
    source: str = "main"


@dataclass(frozen=True)
class LateDetection:
    point: tuple[int, int]
    color: int
    frame: int = 0


@dataclass(frozen=True)
class FalsePositiveReport:
    point: tuple[int, int]
    frame: int = 0


def _group_and_liberties(cells: np.ndarray, col: int, row: int):
    """Flood fill the group at (col, row); returns (stones, liberty count)."""
    n = cells.shape[0]
    color = cells[row, col]
    stack = [(col, row)]
    seen = {(col, row)}
    group = []
    libs = set()
    while stack:
        c, r = stack.pop()
        group.append((c, r))
        for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nc, nr = c + dc, r + dr
            if not (0 <= nc < n and 0 <= nr < n):
                continue
            v = cells[nr, nc]
            if v == EMPTY:
                libs.add((nc, nr))
            elif v == color and (nc, nr) not in seen:
                seen.add((nc, nr))
                stack.append((nc, nr))
    return group, len(libs)


def captured_groups(b: "BoardState", point: tuple[int, int], color: int) -> list:
    """Opponent groups left without liberties if `color` plays at `point`."""
    col, row = point
    if b.cells[row, col] != EMPTY:
        raise OccupiedError(f"point {point} is occupied")
    cells = b.cells.copy()
    cells[row, col] = color
    groups = []
    seen = set()
    opp = opponent(color)
    for dc, dr in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nc, nr = col + dc, row + dr
        if not (0 <= nc < b.n and 0 <= nr < b.n):
            continue
        if cells[nr, nc] == opp and (nc, nr) not in seen:
            group, libs = _group_and_liberties(cells, nc, nr)
            seen.update(group)
            if libs == 0:
                groups.append(group)
    return groups


class BoardState:
    """Single-owner game state; all mutation goes through the transitions."""

    def __init__(self, n: int = 19, setup_black=(), setup_white=(),
                 to_move: int = BLACK):
        self.n = n
        self.cells = np.zeros((n, n), dtype=np.int8)
        self.setup_black = [tuple(p) for p in setup_black]
        self.setup_white = [tuple(p) for p in setup_white]
        for col, row in self.setup_black:
            self.cells[row, col] = BLACK
        for col, row in self.setup_white:
            self.cells[row, col] = WHITE
        self.to_move = to_move
        self.moves: list[MoveRecord] = []
        self.event_log: list[str] = []
        self._positions = [self.cells.tobytes()]

    # -- queries ------------------------------------------------------------

    @property
    def last_move(self) -> MoveRecord | None:
        return self.moves[-1] if self.moves else None

    def stone_count(self) -> int:
        return int(np.count_nonzero(self.cells))

    def stones(self) -> dict:
        out = {}
        for row in range(self.n):
            for col in range(self.n):
                v = self.cells[row, col]
                if v != EMPTY:
                    out[(col, row)] = int(v)
        return out

    def rows(self) -> list[str]:
        return ["".join(_COLOR_CH[int(v)] for v in self.cells[r])
                for r in range(self.n)]

    def snapshot(self) -> np.ndarray:
        return self.cells.copy()

    # -- internals ----------------------------------------------------------

    def _log(self, frame: int, action: str, point, flags=()):
        pt = "-" if point is None else f"{point[0]},{point[1]}"
        fl = ",".join(sorted(flags)) if flags else "-"
        self.event_log.append(f"{frame}\t{action}\t{pt}\t{fl}")

    def _place(self, color: int, point: tuple[int, int], frame: int,
               flags: set, number: int | None = None) -> MoveRecord:
        col, row = point
        if self.cells[row, col] != EMPTY:
            raise OccupiedError(f"point {point} is occupied")
        caps = captured_groups(self, point, color)
        captured = [((c, r), int(self.cells[r, c])) for g in caps for (c, r) in g]
        trial = self.cells.copy()
        trial[row, col] = color
        for (c, r), _ in captured:
            trial[r, c] = EMPTY
        _, libs = _group_and_liberties(trial, col, row)
        if libs == 0:
            raise IllegalMoveError(f"suicide at {point}")
        # simple ko: the move may not recreate the position before the
        # opponent's last move
        if len(self._positions) >= 2 and trial.tobytes() == self._positions[-2]:
            raise IllegalMoveError(f"ko recapture at {point}")
        self.cells = trial
        rec = MoveRecord(number=number or len(self.moves) + 1, color=color,
                         point=point, frame=frame, flags=set(flags),
                         captured=captured)
        self.moves.append(rec)
        self._positions.append(self.cells.tobytes())
        self.to_move = opponent(color)
        return rec

    def _pop_last(self) -> MoveRecord:
        rec = self.moves.pop()
        col, row = rec.point
        self.cells[row, col] = EMPTY
        for (c, r), color in rec.captured:
            self.cells[r, c] = color
        self._positions.pop()
        self.to_move = rec.color
        return rec

    # -- transitions --------------------------------------------------------

    def on_detection(self, d: DetectionEvent) -> MoveRecord:
        """Record a detected stone as the next move.

        Captured groups are removed from the internal board at once; an
        illegal placement (suicide, ko recapture) is a detection error
        and leaves the board unchanged.
        """
        if d.color != self.to_move:
            raise IllegalMoveError(
                f"detection color {d.color} does not match expected {self.to_move}")
        rec = self._place(d.color, d.point, d.frame, set())
        self._log(d.frame, "move", d.point,
                  {f"captures:{len(rec.captured)}"} if rec.captured else ())
        return rec

    def on_false_positive(self, report: FalsePositiveReport) -> bool:
        """Apply a false-positive report; deletion only for the last move.

        Returns True when the last move was deleted, False when only a
        warning was recorded (the report never mutates older moves).
        """
        col, row = report.point
        if self.cells[row, col] == EMPTY:
            self._log(report.frame, "false-positive-stale", report.point)
            return False
        last = self.last_move
        if last is not None and last.point == report.point:
            self._pop_last()
            self._log(report.frame, "false-positive-deleted", report.point)
            return True
        self._log(report.frame, "false-positive-warning", report.point)
        return False

    def delete_last_move(self, frame: int = 0) -> MoveRecord | None:
        """Operator-initiated removal of the last move."""
        if not self.moves:
            return None
        rec = self._pop_last()
        self._log(frame, "deleted-last", rec.point)
        return rec

    def replace_last_if_vanished(self, d: DetectionEvent) -> MoveRecord:
        """Re-point the last move to the real one; captures recomputed."""
        if not self.moves:
            raise IllegalMoveError("no move to replace")
        old = self._pop_last()
        try:
            rec = self._place(old.color, d.point, d.frame,
                              old.flags | {"replaced"}, number=old.number)
        except IllegalMoveError:
            # restore the popped move on failure
            self._place(old.color, old.point, old.frame, old.flags,
                        number=old.number)
            raise
        self._log(d.frame, "replaced-last", d.point, {"replaced"})
        return rec

    def insert_late(self, late: LateDetection) -> MoveRecord:
        """Append a stone the main detector missed, with warnings."""
        flags = {"late-inserted", "order-warning"}
        breaks_alternation = bool(self.moves) and self.moves[-1].color == late.color
        rec = self._place(late.color, late.point, late.frame, flags)
        extra = {"alternation-break"} if breaks_alternation else set()
        self._log(late.frame, "late-insert", late.point, flags | extra)
        return rec

    def swap_moves(self, a: int, b: int) -> None:
        """Swap two move ordinals (operator fix for wrong detection order)."""
        if not (1 <= a <= len(self.moves) and 1 <= b <= len(self.moves)):
            raise IllegalMoveError("move number out of range")
        seq = [replace(m, flags=set(m.flags)) for m in self.moves]
        seq[a - 1], seq[b - 1] = seq[b - 1], seq[a - 1]
        reordered = [(m.color, m.point, m.frame, m.flags) for m in seq]
        fresh = BoardState(self.n, self.setup_black, self.setup_white,
                           to_move=reordered[0][0] if reordered else self.to_move)
        for color, point, frame, flags in reordered:
            flags = set(flags) - {"order-warning"}
            fresh._place(color, point, frame, flags)
        self.cells = fresh.cells
        self.moves = fresh.moves
        self._positions = fresh._positions
        self.to_move = fresh.to_move
        self._log(0, "swapped", None, {f"{a}<->{b}"})

    # -- verification / export ---------------------------------------------

    def replay_cells(self) -> np.ndarray:
        """Board obtained by replaying the move list from the setup."""
        fresh = BoardState(self.n, self.setup_black, self.setup_white)
        for m in self.moves:
            fresh._place(m.color, m.point, m.frame, m.flags, number=m.number)
        return fresh.cells

    def check_invariants(self) -> None:
        assert np.array_equal(self.cells, self.replay_cells()), "replay mismatch"
        for row in range(self.n):
            for col in range(self.n):
                if self.cells[row, col] != EMPTY:
                    _, libs = _group_and_liberties(self.cells, col, row)
                    assert libs > 0, f"zero-liberty group at {(col, row)}"


def export_sgf(b: BoardState, meta: GameMeta | None = None) -> str:
    """SGF FF[4] text; warning flags become node comments."""
    meta = meta or GameMeta(size=b.n)
    game = sgf.SgfGame(size=b.n)
    root = game.root
    if meta.black_name:
        root["PB"] = [meta.black_name]
    if meta.white_name:
        root["PW"] = [meta.white_name]
    if meta.black_rank:
        root["BR"] = [meta.black_rank]
    if meta.white_rank:
        root["WR"] = [meta.white_rank]
    if meta.event:
        root["EV"] = [meta.event]
    if meta.rules:
        root["RU"] = [meta.rules]
    root["KM"] = [f"{meta.komi:g}"]
    if meta.date:
        root["DT"] = [meta.date]
    game.setup_black = list(b.setup_black)
    game.setup_white = list(b.setup_white)
    for m in b.moves:
        comment = ", ".join(sorted(m.flags)) if m.flags else None
        game.moves.append((_SGF_COLOR[m.color], m.point, comment))
    return sgf.serialize_sgf(game)
