import { describe, expect, it } from "vitest";
import {
  ProtocolError,
  encodeCommand,
  parseServerEvent,
} from "../src/protocol.js";

const MOVE = {
  type: "move",
  number: 3,
  color: "W",
  point: [4, 2],
  frame: 120,
  flags: ["late-inserted"],
  captures: [[4, 1]],
};

describe("parseServerEvent", () => {
  it("parses a move event with captures", () => {
    const ev = parseServerEvent(JSON.stringify(MOVE));
    expect(ev).toEqual(MOVE);
  });

  it("parses a snapshot with nested moves", () => {
    const snap = {
      type: "snapshot",
      board: ["...", ".B.", "..W"],
      moves: [{ ...MOVE, type: undefined }].map(({ type: _t, ...m }) => m),
      frame: 9,
    };
    const ev = parseServerEvent(JSON.stringify(snap));
    expect(ev.type).toBe("snapshot");
    if (ev.type === "snapshot") {
      expect(ev.board).toEqual(["...", ".B.", "..W"]);
      expect(ev.moves[0].captures).toEqual([[4, 1]]);
    }
  });

  it("parses warning, grid, ack and error events", () => {
    expect(
      parseServerEvent('{"type":"warning","text":"tracking lost","frame":7}'),
    ).toEqual({ type: "warning", text: "tracking lost", frame: 7 });
    const grid = parseServerEvent(
      '{"type":"grid","corners":[[0,0],[1,0],[1,1],[0,1]],"frame":2}',
    );
    expect(grid.type).toBe("grid");
    expect(
      parseServerEvent('{"type":"ack","kind":"pause","frame":3}'),
    ).toEqual({ type: "ack", kind: "pause", frame: 3 });
    expect(parseServerEvent('{"type":"error","text":"no move to delete"}'))
      .toEqual({ type: "error", text: "no move to delete", frame: 0 });
  });

  it("rejects lines that are not JSON objects", () => {
    expect(() => parseServerEvent("not json")).toThrow(ProtocolError);
    expect(() => parseServerEvent("[1,2]")).toThrow(ProtocolError);
    expect(() => parseServerEvent('"move"')).toThrow(ProtocolError);
  });

  it("rejects unknown types and malformed shapes", () => {
    expect(() => parseServerEvent('{"type":"telemetry"}')).toThrow(
      ProtocolError,
    );
    expect(() =>
      parseServerEvent(JSON.stringify({ ...MOVE, point: [1.5, 2] })),
    ).toThrow(ProtocolError);
    expect(() =>
      parseServerEvent(JSON.stringify({ ...MOVE, captures: [[1]] })),
    ).toThrow(ProtocolError);
    expect(() =>
      parseServerEvent('{"type":"snapshot","board":["xyz"],"moves":[],"frame":0}'),
    ).toThrow(ProtocolError);
  });
});

describe("encodeCommand", () => {
  it("emits one NDJSON line with the idempotency token", () => {
    const line = encodeCommand(
      { kind: "swap-moves", args: { a: 1, b: 2 } },
      "swap-moves#0",
    );
    expect(line.endsWith("\n")).toBe(true);
    expect(JSON.parse(line)).toEqual({
      type: "command",
      kind: "swap-moves",
      args: { a: 1, b: 2 },
      token: "swap-moves#0",
    });
  });

  it("refuses unknown command kinds", () => {
    expect(() =>
      encodeCommand({ kind: "rewind-everything" as never }, "t"),
    ).toThrow(ProtocolError);
  });
});
