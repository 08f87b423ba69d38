"""Session orchestration: the main per-frame loop plus supervisors.

The main loop owns all mutable state (single-writer): per frame it
loads, filters, fast-tracks the grid, runs the fast detector, then
drains the supervisor and operator queues exactly once at the frame
boundary.  Supervisors — the early-game linear grid checker, the
late-game circular relocator and the whole-board async scanner — run
cooperatively on immutable snapshots at fixed cadences.  Cooperative
scheduling (instead of free-running threads) is what makes a session
bit-reproducible for a given seed; the lag policy is preserved by
construction, since a supervisor invoked at frame k always works on the
newest snapshot, never a backlog.
"""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import detect as detect_mod
from .detect import AsyncEvidence, ReferenceStats, main_step, seed_empty
from .frames import Frame, SourceSpec, open_source, unsharp_mask
from .game import (BLACK, EMPTY, WHITE, BoardState, DetectionEvent,
                   FalsePositiveReport, GameMeta, IllegalMoveError,
                   LateDetection, export_sgf)
from .geometry import GridModel, RectLayout, rectify_pixels
from .gridinit import GridNotFoundError, AmbiguousGridError, locate_grid
from .gridtrack import (GridProposal, TrackingLostError, InsufficientStonesError,
                        NoMatchError, AmbiguousMatchError, accept_grid,
                        fast_track, proposal_streak, yose_relocate)


class InitFailedError(RuntimeError):
    """No grid found within the initial search window."""


class AbortedError(RuntimeError):
    """Session stopped by operator command."""


@dataclass(frozen=True)
class SupervisorMessage:
    kind: str  # grid-proposal | late-detection | false-positive | tracking-warning
    payload: object
    frame: int = 0


@dataclass(frozen=True)
class OperatorCommand:
    kind: str  # delete-last-move | swap-moves | confirm-late | force-reinit | pause | resume
    args: dict = field(default_factory=dict)

    _KINDS = ("delete-last-move", "swap-moves", "confirm-late",
              "force-reinit", "pause", "resume")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown command kind {self.kind!r}")


@dataclass
class SessionConfig:
    source: SourceSpec | None = None
    size: int = 19
    out: str | None = None
    usm: tuple | None = None          # (sigma, amount) unsharp filter
    seed: int = 0
    serve: tuple | None = None        # (host, port) operator endpoint
    report: str | None = None         # report JSON path; figures beside it
    rect_size: int = 500
    rect_margin: float = 1.0
    init_window: int = 100            # frames allowed for initial location
    gate_main: int = 3
    gate_async: int = 5
    margin: float = 0.6               # classifier margin
    relocation_min_stones: int = 20
    check_every: int = 10             # linear checker cadence (frames)
    relocate_every: int = 5           # circular relocator cadence
    scan_every: int = 3               # async scanner cadence
    refs_halflife: float = 50.0

    def __post_init__(self):
        if self.size not in (9, 13, 19):
            raise ValueError("board size must be 9, 13 or 19")
        if not (1 <= self.gate_main <= 10 and 1 <= self.gate_async <= 10):
            raise ValueError("detection gates out of range")
        if not 0.0 < self.margin < 1.0:
            raise ValueError("classifier margin must be in (0, 1)")
        if self.init_window < 1:
            raise ValueError("init window must be positive")

    @classmethod
    def from_file(cls, path: str, **overrides) -> "SessionConfig":
        with open(path) as fh:
            data = json.load(fh)
        if "source" in data and isinstance(data["source"], dict):
            data["source"] = SourceSpec(**data["source"])
        for k in ("usm", "serve"):
            if k in data and data[k] is not None:
                data[k] = tuple(data[k])
        data.update(overrides)
        return cls(**data)


@dataclass
class SessionReport:
    frames: int = 0
    moves: int = 0
    detections: int = 0
    late_insertions: int = 0
    false_positive_reports: int = 0
    warnings: list = field(default_factory=list)
    grid_corrections: int = 0
    init_frame: int = 0
    handoff_frame: int | None = None  # linear -> circular supervisor switch
    duration_s: float = 0.0
    sgf: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def apply_messages(state: BoardState, queue: list,
                   report: SessionReport | None = None, emit=None) -> list:
    """Drain supervisor messages in arrival order; invalid ones warn.

    Grid proposals are not handled here (they go through accept_grid in
    the tracking layer); the list of unconsumed messages is returned so
    the caller can route them.  `emit`, when given, receives a warning
    event dict for every warning recorded.
    """
    report = report if report is not None else SessionReport()

    def warn(frame, text):
        report.warnings.append(f"frame {frame}: {text}")
        if emit is not None:
            emit({"type": "warning", "text": text, "frame": frame})

    remaining = []
    for msg in queue:
        if msg.kind == "late-detection":
            late = msg.payload
            col, row = late.point
            if state.cells[row, col] != EMPTY:
                warn(msg.frame, f"late detection at {late.point} "
                     "dropped (point occupied)")
                continue
            try:
                state.insert_late(late)
                report.late_insertions += 1
            except IllegalMoveError as e:
                warn(msg.frame, str(e))
        elif msg.kind == "false-positive":
            state.on_false_positive(msg.payload)
            report.false_positive_reports += 1
        elif msg.kind == "tracking-warning":
            warn(msg.frame, f"tracking warning: {msg.payload}")
        elif msg.kind == "grid-proposal":
            remaining.append(msg)
        else:
            warn(msg.frame, f"dropped unknown message {msg.kind!r}")
    queue.clear()
    return remaining


class Engine:
    """Owns one transcription session; see `run_session` for the loop."""

    def __init__(self, cfg: SessionConfig):
        self.cfg = cfg
        self.layout = RectLayout(cfg.size, cfg.rect_size, cfg.rect_margin)
        self.state = BoardState(cfg.size)
        self.refs = ReferenceStats(halflife=cfg.refs_halflife)
        self.evidence: dict = {}
        self.async_evidence = AsyncEvidence()
        self.grid: GridModel | None = None
        self.report = SessionReport()
        self.queue: list = []          # SupervisorMessage, frame-boundary drain
        self.commands: list = []       # OperatorCommand queue
        self.paused = False
        self.aborted = False
        self._rng = np.random.default_rng(cfg.seed)
        self._prev_frame: Frame | None = None
        self._proposals: list = []     # GridProposal history for accept_grid
        self._active_checker = "linear"
        self._relocation_successes = 0
        self._carry = None             # streaming circle candidates
        self._tracking_lost = False
        self._reinit_requested = False
        self._observers: list = []     # callables(event dict)
        self.grid_history: list = []   # (frame index, corner array) per frame

    # -- events -------------------------------------------------------------

    def add_observer(self, fn) -> None:
        self._observers.append(fn)

    def _emit(self, event: dict) -> None:
        for fn in self._observers:
            try:
                fn(event)
            except Exception:
                pass  # observers (e.g. wire clients) must not stop the loop

    def _warn(self, frame: int, text: str) -> None:
        self.report.warnings.append(f"frame {frame}: {text}")
        self._emit({"type": "warning", "text": text, "frame": frame})

    def snapshot_event(self) -> dict:
        return {
            "type": "snapshot",
            "board": self.state.rows(),
            "moves": [self._move_dict(m) for m in self.state.moves],
            "frame": self.report.frames,
        }

    @staticmethod
    def _move_dict(m) -> dict:
        # captures ride along so a thin client can mirror the board
        # without re-deriving game logic (single source of truth)
        return {"number": m.number, "color": "B" if m.color == BLACK else "W",
                "point": list(m.point), "frame": m.frame,
                "flags": sorted(m.flags),
                "captures": [list(p) for p, _ in m.captured]}

    # -- initial location ---------------------------------------------------

    def _try_init(self, frame: Frame) -> bool:
        try:
            self.grid = locate_grid(frame, self.cfg.size)
        except (GridNotFoundError, AmbiguousGridError):
            return False
        self.report.init_frame = frame.index
        rect = rectify_pixels(frame.pixels, self.grid,
                              self.cfg.rect_size, self.cfg.rect_margin)
        seed_empty(self.refs, rect, self.layout, detect_mod._rect_edges(rect))
        self._emit({"type": "grid", "corners": self.grid.corners.tolist(),
                    "frame": frame.index})
        return True

    # -- supervisors (cooperative) ------------------------------------------

    def _occupancy(self) -> float:
        return self.state.stone_count() / (self.cfg.size ** 2)

    def _run_grid_checker(self, frame: Frame) -> None:
        """One supervisor slot: linear early, circular in yose, never both."""
        cfg = self.cfg
        proposal = None
        # while the fast tracker is lost the checker escalates to every
        # frame, so an accepted correction lands within the gate budget
        if self._active_checker == "linear":
            if frame.index % cfg.check_every == 0 or self._tracking_lost:
                try:
                    g = locate_grid(frame, cfg.size)
                    proposal = GridProposal(grid=g, source="linear-async",
                                            frame=frame.index)
                except (GridNotFoundError, AmbiguousGridError):
                    pass
            # circular relocation is probed (not yet authoritative) to
            # decide the handoff once enough stones are down
            if (self.state.stone_count() >= cfg.relocation_min_stones
                    and frame.index % cfg.relocate_every == 0):
                probe = self._relocate(frame)
                if probe is not None:
                    self._relocation_successes += 1
                    if self._relocation_successes >= 2:
                        self._active_checker = "circular"
                        self.report.handoff_frame = frame.index
                else:
                    self._relocation_successes = 0
        else:
            if frame.index % cfg.relocate_every == 0 or self._tracking_lost:
                proposal = self._relocate(frame)
        if proposal is not None:
            self.queue.append(SupervisorMessage("grid-proposal", proposal,
                                                frame.index))

    def _relocate(self, frame: Frame) -> GridProposal | None:
        try:
            prop = yose_relocate(self._prev_frame, frame, self.grid,
                                 self.state, rng=self._rng,
                                 rect_size=self.cfg.rect_size,
                                 min_stones=self.cfg.relocation_min_stones,
                                 frame=frame.index, carry=self._carry)
        except (InsufficientStonesError, NoMatchError,
                AmbiguousMatchError):
            self._carry = None
            return None
        except Exception as e:
            self._warn(frame.index, f"relocation failed: {e}")
            self._carry = None
            return None
        self._carry = list(prop.carry)
        return prop

    def _run_async_scanner(self, frame: Frame, rect, edges) -> None:
        for out in detect_mod.async_scan_step(
                rect, self.state, self.async_evidence, self.refs, self.layout,
                edges=edges, frame=frame.index, gate=self.cfg.gate_async,
                margin=self.cfg.margin):
            if isinstance(out, LateDetection):
                self.queue.append(SupervisorMessage("late-detection", out,
                                                    frame.index))
            else:
                self.queue.append(SupervisorMessage("false-positive", out,
                                                    frame.index))

    # -- grid proposal acceptance -------------------------------------------

    def _consider_proposals(self, msgs: list) -> None:
        for msg in msgs:
            prop = msg.payload
            if (self._proposals
                    and self._proposals[-1].source != prop.source):
                self._proposals = []
            self._proposals.append(prop)
            k = proposal_streak(self._proposals)
            # after a loss the checker runs every frame, so demanding a
            # third agreeing proposal costs one frame and buys accuracy
            if self._tracking_lost and k < 3:
                continue
            if accept_grid(self._proposals, self._occupancy()) == "accept":
                # fuse the agreeing streak: each proposal carries
                # independent localization noise, so the mean corner set
                # is tighter than any single proposal
                corners = np.mean(
                    [p.grid.corners for p in self._proposals[-k:]], axis=0)
                fused = GridModel(prop.grid.n, corners)
                moved = float(np.linalg.norm(
                    fused.corners - self.grid.corners, axis=1).max())
                self._proposals = []
                self._tracking_lost = False
                # a proposal close to the tracked grid merely confirms it;
                # swapping would trade sub-pixel tracking for the checker's
                # own noise.  Only a genuine displacement is a correction.
                if moved > 0.2 * self.grid.spacing_px():
                    self.grid = fused
                    self._carry = None  # carried circles used the old grid
                    self.report.grid_corrections += 1
                    self._emit({"type": "grid",
                                "corners": self.grid.corners.tolist(),
                                "frame": msg.frame})

    # -- operator commands --------------------------------------------------

    def submit_command(self, cmd: OperatorCommand) -> None:
        self.commands.append(cmd)

    def _apply_commands(self, frame_index: int) -> None:
        for cmd in self.commands:
            try:
                if cmd.kind == "pause":
                    self.paused = True
                elif cmd.kind == "resume":
                    self.paused = False
                elif cmd.kind == "delete-last-move":
                    rec = self.state.delete_last_move(frame_index)
                    if rec is None:
                        raise IllegalMoveError("no move to delete")
                elif cmd.kind == "swap-moves":
                    self.state.swap_moves(int(cmd.args["a"]),
                                          int(cmd.args["b"]))
                elif cmd.kind == "confirm-late":
                    pt = tuple(cmd.args["point"])
                    color = BLACK if cmd.args["color"] in ("B", BLACK) else WHITE
                    self.state.insert_late(LateDetection(
                        point=pt, color=color, frame=frame_index))
                elif cmd.kind == "force-reinit":
                    self._reinit_requested = True
                self._emit({"type": "ack", "kind": cmd.kind,
                            "frame": frame_index})
                if cmd.kind in ("delete-last-move", "swap-moves",
                                "confirm-late"):
                    # a mutating command invalidates client-side replay
                    # state; follow the ack with a fresh snapshot
                    self._emit(self.snapshot_event())
            except (IllegalMoveError, KeyError, ValueError) as e:
                self._emit({"type": "error", "text": str(e),
                            "frame": frame_index})
        self.commands.clear()

    # -- detections ---------------------------------------------------------

    def _handle_detection(self, d: DetectionEvent, rect, edges) -> None:
        self.report.detections += 1
        try:
            rec = self.state.on_detection(d)
        except IllegalMoveError:
            rec = self._try_replace_last(d, rect, edges)
            if rec is None:
                self._warn(d.frame, f"dropped detection {d.point} "
                           f"color {d.color}")
                return
        self._emit({"type": "move", **self._move_dict(rec)})

    def _try_replace_last(self, d: DetectionEvent, rect, edges):
        """Last-move replacement: the phantom's point must now look empty."""
        last = self.state.last_move
        if last is None or last.color != d.color:
            return None
        x = detect_mod.extract_features(rect, last.point, self.layout, edges)
        if detect_mod.classify_point(x, self.refs, self.cfg.margin) != EMPTY:
            return None
        try:
            return self.state.replace_last_if_vanished(d)
        except IllegalMoveError:
            return None

    # -- main loop ----------------------------------------------------------

    def run(self, frames=None) -> SessionReport:
        cfg = self.cfg
        t0 = time.perf_counter()
        if frames is None:
            if cfg.source is None:
                raise ValueError("config has no source and no frames given")
            frames = open_source(cfg.source)
        located = False
        seen = 0
        for frame in frames:
            seen += 1
            if cfg.usm is not None:
                frame = unsharp_mask(frame, cfg.usm[0], cfg.usm[1])
            if not located:
                located = self._try_init(frame)
                self.report.frames += 1
                self._prev_frame = frame
                if not located and seen >= cfg.init_window:
                    raise InitFailedError(
                        f"no grid located in the first {seen} frames")
                continue

            if self.aborted:
                raise AbortedError("session aborted by operator")
            if self.paused:
                self.report.frames += 1
                self._apply_commands(frame.index)
                self._prev_frame = frame
                continue
            if self._reinit_requested:
                self._reinit_requested = False
                if not self._try_init(frame):
                    self._warn(frame.index, "forced re-init found no grid")

            # fast per-frame tracking.  Once lost, the grid stays frozen
            # until a checker proposal confirms or corrects it: after a
            # bump the tracker can re-lock onto the periodic grid texture
            # a whole lattice period off, which looks consistent to every
            # probe, so its own success cannot clear the flag.
            if not self._tracking_lost:
                try:
                    self.grid = fast_track(self.grid, self._prev_frame, frame)
                except TrackingLostError as e:
                    self.queue.append(SupervisorMessage(
                        "tracking-warning", str(e), frame.index))
                    self._tracking_lost = True

            self.grid_history.append((frame.index, self.grid.corners.copy()))

            rect = rectify_pixels(frame.pixels, self.grid,
                                  cfg.rect_size, cfg.rect_margin)
            edges = detect_mod._rect_edges(rect)

            # detection runs only while the grid is believed locked
            if not self._tracking_lost:
                for d in main_step(rect, self.state, self.evidence, self.refs,
                                   self.layout, edges=edges, frame=frame.index,
                                   gate=cfg.gate_main, margin=cfg.margin):
                    self._handle_detection(d, rect, edges)

            # cooperative supervisors on the newest snapshot
            if frame.index % cfg.scan_every == 0 and not self._tracking_lost:
                self._run_async_scanner(frame, rect, edges)
            self._run_grid_checker(frame)

            # frame boundary: messages then operator commands, exactly once
            proposals = apply_messages(self.state, self.queue, self.report,
                                       emit=self._emit)
            self._consider_proposals(proposals)
            self._apply_commands(frame.index)

            self.report.frames += 1
            self._prev_frame = frame

        if not located:
            raise InitFailedError(
                f"no grid located in {seen} frames (stream ended)")
        self.report.moves = len(self.state.moves)
        self.report.duration_s = time.perf_counter() - t0
        self.report.sgf = export_sgf(self.state, GameMeta(size=cfg.size))
        if cfg.out:
            with open(cfg.out, "w") as fh:
                fh.write(self.report.sgf)
            log_path = os.path.splitext(cfg.out)[0] + ".log"
            with open(log_path, "w") as fh:
                fh.write("".join(line + "\n" for line in self.state.event_log))
        return self.report


def run_session(cfg: SessionConfig, frames=None,
                engine_hook=None) -> SessionReport:
    """Run a full transcription session; see Engine.run.

    `frames` may inject an iterable of Frames (tests, synthetic
    streams) instead of reading `cfg.source`.  `engine_hook(engine)` is
    called before the loop starts, e.g. to attach observers or an
    operator endpoint.
    """
    engine = Engine(cfg)
    if engine_hook is not None:
        engine_hook(engine)
    server = None
    if cfg.serve is not None:
        from .wire import serve_operator
        server = serve_operator(engine, cfg.serve[0], int(cfg.serve[1]))
    try:
        result = engine.run(frames)
    finally:
        if server is not None:
            server.close()
    if cfg.report:
        from .report import write_report
        write_report(engine, cfg.report)
    return result
