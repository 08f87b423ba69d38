/**
 * NDJSON socket client for the engine's operator endpoint.
 *
 * Runs under node (the endpoint speaks raw TCP).  All state lives in
 * the pure reducer; this class only moves bytes: it buffers partial
 * lines, parses events, and forwards them to applyEvent.  Commands
 * issued while offline are queued and flushed on reconnect, and every
 * user action gets exactly one idempotency token so a flush can never
 * send the same action twice.
 */

import { Socket, createConnection } from "node:net";
import {
  Command,
  ProtocolError,
  ServerEvent,
  encodeCommand,
  parseServerEvent,
} from "./protocol.js";
import { ConsoleState, applyEvent, initialState } from "./state.js";

type Listener = (ev: ServerEvent, state: ConsoleState) => void;

export class ConsoleClient {
  state: ConsoleState = initialState();

  private socket: Socket | null = null;
  private buffer = "";
  private pending: string[] = []; // encoded lines awaiting a connection
  private sent = new Set<string>();
  private counter = 0;
  private listeners: Listener[] = [];

  constructor(
    private host: string,
    private port: number,
  ) {}

  onEvent(fn: Listener): void {
    this.listeners.push(fn);
  }

  connect(): Promise<void> {
    return new Promise((resolve, reject) => {
      const socket = createConnection(this.port, this.host);
      socket.setEncoding("utf8");
      socket.once("connect", () => {
        this.socket = socket;
        this.state = { ...this.state, connected: true };
        for (const line of this.pending.splice(0)) socket.write(line);
        resolve();
      });
      socket.on("data", (chunk: string) => this.feed(chunk));
      socket.on("error", (err) => {
        if (this.socket !== socket) reject(err);
        this.dropped(socket);
      });
      socket.on("close", () => this.dropped(socket));
    });
  }

  private dropped(socket: Socket): void {
    if (this.socket !== socket) return;
    this.socket = null;
    // the board survives a disconnect; only the banner flips, and the
    // next snapshot after reconnecting re-syncs the mirror
    this.state = { ...this.state, connected: false };
  }

  private feed(chunk: string): void {
    this.buffer += chunk;
    let nl: number;
    while ((nl = this.buffer.indexOf("\n")) >= 0) {
      const line = this.buffer.slice(0, nl).trim();
      this.buffer = this.buffer.slice(nl + 1);
      if (!line) continue;
      let ev: ServerEvent;
      try {
        ev = parseServerEvent(line);
      } catch (e) {
        if (e instanceof ProtocolError) continue; // corrupt line: skip
        throw e;
      }
      this.state = applyEvent(this.state, ev);
      for (const fn of this.listeners) fn(ev, this.state);
    }
  }

  /** Queue or send one command; returns its idempotency token. */
  send(cmd: Command): string {
    const token = `${cmd.kind}#${this.counter++}`;
    if (this.sent.has(token)) return token;
    this.sent.add(token);
    const line = encodeCommand(cmd, token);
    if (this.socket) this.socket.write(line);
    else this.pending.push(line);
    return token;
  }

  get queuedCount(): number {
    return this.pending.length;
  }

  waitFor(pred: (state: ConsoleState) => boolean, timeoutMs = 10_000): Promise<ConsoleState> {
    return new Promise((resolve, reject) => {
      if (pred(this.state)) return resolve(this.state);
      const timer = setTimeout(
        () => reject(new Error("waitFor timed out")),
        timeoutMs,
      );
      this.onEvent((_ev, state) => {
        if (pred(state)) {
          clearTimeout(timer);
          resolve(state);
        }
      });
    });
  }

  close(): void {
    this.socket?.end();
    this.socket = null;
    this.state = { ...this.state, connected: false };
  }
}
