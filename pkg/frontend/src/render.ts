/**
 * View models for the operator console: a text board diagram with the
 * last move highlighted, and a move list with badges for flagged moves.
 * Pure functions of ConsoleState so they can be tested without a
 * terminal or a connection.
 */

import { Move, Point } from "./protocol.js";
import { ConsoleState } from "./state.js";

export interface BoardView {
  rows: string[]; // "." | "B" | "W" per cell, space-separated
  lastMove: Point | null;
}

export interface MoveRow {
  number: number;
  color: string;
  point: Point;
  badges: string[]; // move flags needing operator attention
}

const GLYPH: Record<string, string> = { ".": "·", B: "●", W: "○" };

export function renderBoard(state: ConsoleState): BoardView {
  const last = state.moves.length
    ? state.moves[state.moves.length - 1].point
    : null;
  const rows = state.board.map((row, r) =>
    [...row]
      .map((cell, c) => {
        if (last && last[0] === c && last[1] === r)
          return cell === "B" ? "◆" : "◇";
        return GLYPH[cell] ?? "?";
      })
      .join(" "),
  );
  return { rows, lastMove: last };
}

export function renderMoves(state: ConsoleState): MoveRow[] {
  return state.moves.map((m: Move) => ({
    number: m.number,
    color: m.color,
    point: m.point,
    badges: [...m.flags].sort(),
  }));
}

export function renderStatus(state: ConsoleState): string {
  const parts = [
    state.connected ? "connected" : "OFFLINE",
    `grid:${state.gridHealth}`,
    `moves:${state.moves.length}`,
    `frame:${state.frame}`,
  ];
  if (state.warnings.length) parts.push(`warnings:${state.warnings.length}`);
  return parts.join("  ");
}
