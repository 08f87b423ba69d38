/**
 * Engine operator wire protocol: newline-delimited JSON.
 *
 * Server → client events and client → server commands, mirroring the
 * engine's endpoint contract.  Parsing is strict: anything that does
 * not match a known event shape raises ProtocolError, so a corrupt
 * line can never silently reach the reducer.
 */

export type Color = "B" | "W";
export type Point = [number, number]; // [col, row]

export interface Move {
  number: number;
  color: Color;
  point: Point;
  frame: number;
  flags: string[];
  /** Server-computed removals; the console never derives captures. */
  captures: Point[];
}

export interface SnapshotEvent {
  type: "snapshot";
  board: string[]; // rows of "." | "B" | "W"
  moves: Move[];
  frame: number;
}

export interface MoveEvent extends Move {
  type: "move";
}

export interface WarningEvent {
  type: "warning";
  text: string;
  frame: number;
}

export interface GridEvent {
  type: "grid";
  corners: [number, number][];
  frame: number;
}

export interface AckEvent {
  type: "ack";
  kind: string;
  frame: number;
}

export interface ErrorEvent {
  type: "error";
  text: string;
  frame?: number;
}

export type ServerEvent =
  | SnapshotEvent
  | MoveEvent
  | WarningEvent
  | GridEvent
  | AckEvent
  | ErrorEvent;

export type CommandKind =
  | "delete-last-move"
  | "swap-moves"
  | "confirm-late"
  | "force-reinit"
  | "pause"
  | "resume";

export const COMMAND_KINDS: readonly CommandKind[] = [
  "delete-last-move",
  "swap-moves",
  "confirm-late",
  "force-reinit",
  "pause",
  "resume",
];

export interface Command {
  kind: CommandKind;
  args?: Record<string, unknown>;
}

export class ProtocolError extends Error {}

function isPoint(v: unknown): v is Point {
  return (
    Array.isArray(v) &&
    v.length === 2 &&
    v.every((x) => typeof x === "number" && Number.isInteger(x))
  );
}

function asMove(v: Record<string, unknown>, where: string): Move {
  const { number: n, color, point, frame, flags, captures } = v;
  if (typeof n !== "number" || (color !== "B" && color !== "W"))
    throw new ProtocolError(`bad move in ${where}`);
  if (!isPoint(point)) throw new ProtocolError(`bad move point in ${where}`);
  if (!Array.isArray(flags) || !flags.every((f) => typeof f === "string"))
    throw new ProtocolError(`bad move flags in ${where}`);
  if (!Array.isArray(captures) || !captures.every(isPoint))
    throw new ProtocolError(`bad move captures in ${where}`);
  return {
    number: n,
    color,
    point,
    frame: typeof frame === "number" ? frame : 0,
    flags,
    captures: captures as Point[],
  };
}

export function parseServerEvent(line: string): ServerEvent {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new ProtocolError(`not JSON: ${line.slice(0, 80)}`);
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw))
    throw new ProtocolError("event is not an object");
  const ev = raw as Record<string, unknown>;
  switch (ev.type) {
    case "snapshot": {
      const { board, moves, frame } = ev;
      if (
        !Array.isArray(board) ||
        !board.every((r) => typeof r === "string" && /^[.BW]*$/.test(r))
      )
        throw new ProtocolError("bad snapshot board");
      if (!Array.isArray(moves))
        throw new ProtocolError("bad snapshot moves");
      return {
        type: "snapshot",
        board: board as string[],
        moves: moves.map((m, i) =>
          asMove(m as Record<string, unknown>, `snapshot move ${i}`),
        ),
        frame: typeof frame === "number" ? frame : 0,
      };
    }
    case "move":
      return { type: "move", ...asMove(ev, "move event") };
    case "warning":
    case "error": {
      if (typeof ev.text !== "string")
        throw new ProtocolError(`bad ${ev.type} text`);
      return {
        type: ev.type,
        text: ev.text,
        frame: typeof ev.frame === "number" ? ev.frame : 0,
      };
    }
    case "grid": {
      if (!Array.isArray(ev.corners) || ev.corners.length !== 4)
        throw new ProtocolError("bad grid corners");
      return {
        type: "grid",
        corners: ev.corners as [number, number][],
        frame: typeof ev.frame === "number" ? ev.frame : 0,
      };
    }
    case "ack": {
      if (typeof ev.kind !== "string") throw new ProtocolError("bad ack kind");
      return {
        type: "ack",
        kind: ev.kind,
        frame: typeof ev.frame === "number" ? ev.frame : 0,
      };
    }
    default:
      throw new ProtocolError(`unknown event type ${String(ev.type)}`);
  }
}

export function encodeCommand(cmd: Command, token: string): string {
  if (!COMMAND_KINDS.includes(cmd.kind))
    throw new ProtocolError(`unknown command kind ${cmd.kind}`);
  return (
    JSON.stringify({
      type: "command",
      kind: cmd.kind,
      args: cmd.args ?? {},
      token,
    }) + "\n"
  );
}
