import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gobanscribe.game import BLACK, WHITE, BoardState, IllegalMoveError
from gobanscribe.sgf import SgfGame, serialize_sgf

_SGF_COLOR = {BLACK: "B", WHITE: "W"}


def legal_game_moves(n: int, count: int, seed: int = 0):
    """A deterministic legal game: [(color, (col, row)), ...].

    Points are tried in a seed-shuffled order with alternating colors;
    placements that would be suicide or ko are skipped.  The referee is
    a throwaway BoardState, so the sequence is legal by construction.
    """
    rng = np.random.default_rng(seed)
    order = [(c, r) for r in range(n) for c in range(n)]
    rng.shuffle(order)
    board = BoardState(n)
    moves = []
    color = BLACK
    i = 0
    while len(moves) < count and i < len(order) * 3:
        pt = order[i % len(order)]
        i += 1
        if board.cells[pt[1], pt[0]] != 0:
            continue
        try:
            board._place(color, pt, 0, set())
        except IllegalMoveError:
            continue
        moves.append((color, pt))
        color = WHITE if color == BLACK else BLACK
    assert len(moves) == count, "could not build a legal game of that length"
    return moves


def moves_to_sgf(moves, n: int) -> str:
    game = SgfGame(size=n)
    game.moves = [(_SGF_COLOR[c], pt, None) for c, pt in moves]
    return serialize_sgf(game)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    # acceptance PASS/FAIL lines are written past capture during the
    # run; echo them here too so they survive fd-level capture and land
    # in piped run logs
    import sys
    mod = sys.modules.get("test_acceptance")
    for line in getattr(mod, "RESULTS", []) if mod else []:
        terminalreporter.write_line(line)
