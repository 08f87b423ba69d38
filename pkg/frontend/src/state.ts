/**
 * Console state as a pure fold over the server event stream.
 *
 * The console keeps no knowledge of the game rules: the board mirrors
 * snapshots verbatim, and a move event applies exactly the placement
 * and the capture list the server computed.  Reconnecting and replaying
 * therefore always reproduces the same state, and a snapshot received
 * at any point resets the mirror to the server's truth.
 */

import {
  GridEvent,
  Move,
  ServerEvent,
  SnapshotEvent,
} from "./protocol.js";

export type GridHealth = "locked" | "lost" | "correcting";

export interface ConsoleState {
  board: string[]; // rows of "." | "B" | "W", row-major
  moves: Move[];
  warnings: { text: string; frame: number }[];
  errors: { text: string; frame: number }[];
  gridHealth: GridHealth;
  gridCorners: [number, number][] | null;
  lastAck: { kind: string; frame: number } | null;
  frame: number;
  connected: boolean;
}

export function initialState(): ConsoleState {
  return {
    board: [],
    moves: [],
    warnings: [],
    errors: [],
    gridHealth: "locked",
    gridCorners: null,
    lastAck: null,
    frame: 0,
    connected: false,
  };
}

function applySnapshot(state: ConsoleState, ev: SnapshotEvent): ConsoleState {
  return {
    ...state,
    board: [...ev.board],
    moves: [...ev.moves],
    frame: ev.frame,
  };
}

function placed(row: string, col: number, stone: string): string {
  return row.slice(0, col) + stone + row.slice(col + 1);
}

function applyMove(state: ConsoleState, m: Move): ConsoleState {
  const board = [...state.board];
  const [col, row] = m.point;
  // the server always sends a snapshot before deltas; if a move ever
  // arrives first, keep the record and let the next snapshot size the
  // board
  if (board[row] !== undefined) {
    board[row] = placed(board[row], col, m.color);
    for (const [cc, cr] of m.captures) {
      if (board[cr] !== undefined) board[cr] = placed(board[cr], cc, ".");
    }
  }
  return { ...state, board, moves: [...state.moves, m], frame: m.frame };
}

function applyGrid(state: ConsoleState, ev: GridEvent): ConsoleState {
  return {
    ...state,
    gridHealth: "locked",
    gridCorners: ev.corners,
    frame: ev.frame,
  };
}

export function applyEvent(state: ConsoleState, ev: ServerEvent): ConsoleState {
  switch (ev.type) {
    case "snapshot":
      return applySnapshot(state, ev);
    case "move":
      return applyMove(state, ev);
    case "grid":
      return applyGrid(state, ev);
    case "warning": {
      const next = {
        ...state,
        warnings: [...state.warnings, { text: ev.text, frame: ev.frame }],
        frame: ev.frame,
      };
      // tracking warnings flip the health badge until the next grid event
      if (/tracking|relocation|no grid/.test(ev.text))
        next.gridHealth = "lost";
      return next;
    }
    case "ack": {
      const next = {
        ...state,
        lastAck: { kind: ev.kind, frame: ev.frame },
        frame: ev.frame,
      };
      if (ev.kind === "force-reinit") next.gridHealth = "correcting";
      return next;
    }
    case "error":
      return {
        ...state,
        errors: [...state.errors, { text: ev.text, frame: ev.frame ?? 0 }],
      };
  }
}

export function replay(events: ServerEvent[]): ConsoleState {
  return events.reduce(applyEvent, initialState());
}
