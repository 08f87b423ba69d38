import { AddressInfo, Server, Socket, createServer } from "node:net";
import { afterEach, describe, expect, it } from "vitest";
import { ConsoleClient } from "../src/client.js";

let servers: Server[] = [];

function listen(onConnection: (conn: Socket) => void): Promise<number> {
  return new Promise((resolve) => {
    const server = createServer(onConnection);
    servers.push(server);
    server.listen(0, "127.0.0.1", () =>
      resolve((server.address() as AddressInfo).port),
    );
  });
}

afterEach(() => {
  for (const s of servers) s.close();
  servers = [];
});

describe("ConsoleClient", () => {
  it("reassembles events split across TCP chunks and skips corrupt lines", async () => {
    const port = await listen((conn) => {
      const snap =
        '{"type":"snapshot","board":["...","...","..."],"moves":[],"frame":0}\n';
      conn.write(snap.slice(0, 25));
      setTimeout(() => {
        conn.write(snap.slice(25));
        conn.write("%% corrupt line %%\n");
        conn.write(
          '{"type":"move","number":1,"color":"B","point":[1,1],' +
            '"frame":7,"flags":[],"captures":[]}\n',
        );
      }, 20);
    });
    const client = new ConsoleClient("127.0.0.1", port);
    await client.connect();
    await client.waitFor((s) => s.moves.length === 1, 5000);
    expect(client.state.board).toEqual(["...", ".B.", "..."]);
    expect(client.state.connected).toBe(true);
    client.close();
  });

  it("queues commands while offline and flushes them once on connect", async () => {
    const received: string[] = [];
    const port = await listen((conn) => {
      conn.on("data", (d) => received.push(d.toString()));
    });
    const client = new ConsoleClient("127.0.0.1", port);
    const t1 = client.send({ kind: "pause" });
    const t2 = client.send({ kind: "pause" });
    expect(client.queuedCount).toBe(2);
    expect(t1).not.toBe(t2); // one token per user action
    await client.connect();
    expect(client.queuedCount).toBe(0);
    await new Promise((r) => setTimeout(r, 50));
    const lines = received.join("").split("\n").filter((l) => l.trim());
    expect(lines).toHaveLength(2); // flushed exactly once, no duplicates
    expect(new Set(lines.map((l) => JSON.parse(l).token)).size).toBe(2);
    client.close();
  });

  it("flips the connection banner when the server goes away", async () => {
    let serverConn: Socket | null = null;
    const port = await listen((conn) => {
      serverConn = conn;
    });
    const client = new ConsoleClient("127.0.0.1", port);
    await client.connect();
    expect(client.state.connected).toBe(true);
    serverConn!.destroy();
    await new Promise((r) => setTimeout(r, 50));
    expect(client.state.connected).toBe(false);
    client.close();
  });
});
