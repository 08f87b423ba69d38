"""Fixture engine session for the console round-trip test.

Runs a real engine with an operator endpoint on an ephemeral port,
prints ``PORT <n>`` once the socket is listening, plays two scripted
stones, then idles on paced tail frames until ``stop`` arrives on
stdin (or a hard frame cap is hit).  The console test drives the
command round-trips against this process.
"""

import sys
import threading
import time

from gobanscribe.engine import Engine, SessionConfig
from gobanscribe.game import BLACK, WHITE
from gobanscribe.synth import SceneTruth, default_pose, render_frame
from gobanscribe.wire import serve_operator

stop = threading.Event()


def _watch_stdin():
    for line in sys.stdin:
        if line.strip() == "stop":
            break
    stop.set()


def _frames():
    g = default_pose(9, 640, 480)
    index = 0

    def emit(stones):
        nonlocal index
        frame = render_frame(SceneTruth(grid=g, stones=stones),
                             640, 480, seed=0, index=index)
        index += 1
        return frame

    for _ in range(6):
        yield emit({})
    for _ in range(10):
        yield emit({(2, 2): BLACK})
    both = {(2, 2): BLACK, (6, 6): WHITE}
    for _ in range(10):
        yield emit(both)
    while not stop.is_set() and index < 1200:
        time.sleep(0.05)
        yield emit(both)


def main():
    threading.Thread(target=_watch_stdin, daemon=True).start()
    engine = Engine(SessionConfig(size=9))
    server = serve_operator(engine)
    print(f"PORT {server.address[1]}", flush=True)
    try:
        engine.run(_frames())
    finally:
        server.close()


if __name__ == "__main__":
    main()
