"""Newline-JSON wire protocol exposing the environment to external agents.

One session drives one environment over strict request/response turns:

    -> {"type": "hello", "seq": 0, "version": 1}
    <- {"type": "hello", "seq": 0, "version": 1, "ok": true}
    -> {"type": "config", "seq": 1, "observation_set": {...}}
    <- {"type": "config", "seq": 1, "ok": true}
    -> {"type": "reset", "seq": 2}
    <- {"type": "obs", "seq": 1, "observation": {...}}
    -> {"type": "act", "seq": 3, "action": 0.5}
    <- {"type": "result", "seq": 2, "observation": {...}, "reward": ..., "done": false}
    ...                         (the final step of an episode arrives as "done")
    -> {"type": "bye", "seq": n}
    <- {"type": "bye", "seq": m}

Client sequence numbers must increase strictly; malformed JSON gets an error
reply and the session survives, order violations get an error and a
disconnect. Flow fields travel as base64 little-endian float32, row-major,
with explicit width/height. Transports: TCP socket or stdio; either way the
exchange is logged so recorded episodes feed the replay tooling.
"""

from __future__ import annotations

import base64
import json
import socketserver
import sys
import threading
import time
from pathlib import Path

import numpy as np

from .env import DragControlEnv, EnvConfig, Observation, config_hash
from .lattice import DivergenceError, FluidConfig

PROTOCOL_VERSION = 1
MAX_LINE_BYTES = 4 << 20
DEFAULT_ALLOWED_OVERRIDES = ("observation_set", "task")
# Published run summaries for this rig counted 1680 steps per one-minute
# episode; the raw act tally is recorded next to that convention.
ANNOUNCED_STEPS_PER_EPISODE = 1680


def encode_flow(flow: np.ndarray) -> dict:
    arr = np.ascontiguousarray(np.asarray(flow), dtype="<f4")
    h, w = arr.shape[0], arr.shape[1]
    channels = 1 if arr.ndim == 2 else arr.shape[2]
    return {
        "w": int(w),
        "h": int(h),
        "channels": int(channels),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_flow(payload: dict) -> np.ndarray:
    w, h, c = int(payload["w"]), int(payload["h"]), int(payload["channels"])
    raw = base64.b64decode(payload["data"])
    arr = np.frombuffer(raw, dtype="<f4")
    if arr.size != w * h * c:
        raise ValueError("flow payload size mismatch")
    return arr.reshape(h, w, c).astype(np.float64)


def observation_payload(obs: Observation) -> dict:
    out = {}
    for name in ("torque", "commanded_rate", "rate_feedback", "time_index"):
        val = getattr(obs, name)
        if val is not None:
            out[name] = float(val)
    if obs.flow is not None:
        out["flow"] = encode_flow(obs.flow)
    return out


class StepPacer:
    """Paces act replies: 'realtime' holds one control interval per step,
    'fast' free-runs."""

    def __init__(self, mode: str, rate_hz: float):
        if mode not in ("realtime", "fast"):
            raise ValueError("pacing mode must be 'realtime' or 'fast'")
        self.mode = mode
        self.interval = 1.0 / rate_hz
        self._next = None

    def pace(self) -> None:
        if self.mode != "realtime":
            return
        now = time.monotonic()
        if self._next is None:
            self._next = now + self.interval
            return
        delay = self._next - now
        if delay > 0:
            time.sleep(delay)
            self._next += self.interval
        else:
            self._next = now + self.interval


class BridgeSession:
    """Protocol state machine for one agent <-> one environment.

    ``handle_line`` never raises on agent input: it returns reply lines and
    flips ``closed`` when the connection must drop.
    """

    def __init__(
        self,
        fluid: FluidConfig,
        cfg: EnvConfig,
        pacing: str = "fast",
        log_dir=None,
        session_id: str = "s0",
        allowed_overrides=DEFAULT_ALLOWED_OVERRIDES,
    ):
        self.fluid = fluid
        self.base_cfg = cfg
        self.overrides: dict = {}
        self.allowed_overrides = tuple(allowed_overrides)
        self.pacer = StepPacer(pacing, cfg.control_rate)
        self.session_id = session_id
        self.log_dir = Path(log_dir) / session_id if log_dir is not None else None
        self.env: DragControlEnv | None = None
        self.greeted = False
        self.closed = False
        self._in_seq = -1
        self._out_seq = -1
        self._acts = 0
        self._episodes_done = 0
        self._t_start = time.monotonic()
        self._session_log = None
        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            self._session_log = open(self.log_dir / "wire.jsonl", "w")

    # -- plumbing -----------------------------------------------------------

    def _reply(self, **fields) -> str:
        self._out_seq += 1
        fields["seq"] = self._out_seq
        line = json.dumps(fields)
        self._log("out", line)
        return line

    def _error(self, message: str, close: bool = False) -> str:
        if close:
            self.closed = True
        return self._reply(type="error", error=message, recoverable=not close)

    def _log(self, direction: str, line: str) -> None:
        if self._session_log is not None:
            self._session_log.write(json.dumps({"dir": direction, "line": line}) + "\n")
            self._session_log.flush()

    def _ensure_env(self) -> DragControlEnv:
        if self.env is None:
            cfg_dict = self.base_cfg.to_dict()
            cfg_dict.update(self.overrides)
            cfg = EnvConfig.from_dict(cfg_dict)
            self.env = DragControlEnv(self.fluid, cfg, log_dir=self.log_dir)
        return self.env

    # -- protocol -----------------------------------------------------------

    def handle_line(self, raw) -> list[str]:
        if self.closed:
            return []
        if isinstance(raw, bytes):
            if len(raw) > MAX_LINE_BYTES:
                return [self._error("line too long", close=True)]
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError:
                return [self._error("malformed JSON: invalid utf-8")]
        self._log("in", raw.rstrip("\n"))
        try:
            msg = json.loads(raw)
        except (json.JSONDecodeError, RecursionError):
            return [self._error("malformed JSON")]
        if not isinstance(msg, dict):
            return [self._error("message must be a JSON object")]
        mtype = msg.get("type")
        seq = msg.get("seq")
        if not isinstance(mtype, str) or not isinstance(seq, int) or isinstance(seq, bool):
            return [self._error("messages need a string 'type' and an integer 'seq'")]
        if seq <= self._in_seq:
            return [self._error(
                f"seq {seq} not greater than previous {self._in_seq}", close=True
            )]
        self._in_seq = seq
        try:
            return self._dispatch(mtype, msg)
        except DivergenceError as err:
            if self.env is not None:
                self.env.in_episode = False
            return [self._error(f"episode aborted: {err}")]
        except Exception as err:  # a session must survive anything an agent sends
            return [self._error(f"internal error: {type(err).__name__}: {err}", close=True)]

    def _dispatch(self, mtype: str, msg: dict) -> list[str]:
        if not self.greeted:
            if mtype != "hello":
                return [self._error("hello required first", close=True)]
            version = msg.get("version")
            if version != PROTOCOL_VERSION:
                return [self._error(f"unsupported protocol version {version!r}", close=True)]
            self.greeted = True
            return [self._reply(type="hello", version=PROTOCOL_VERSION, ok=True)]

        if mtype == "hello":
            return [self._error("duplicate hello", close=True)]
        if mtype == "config":
            if self.env is not None:
                return [self._error("config only before the first reset")]
            rejected = [k for k in msg if k not in ("type", "seq") and k not in self.allowed_overrides]
            if rejected:
                return [self._error(f"overrides not permitted: {sorted(rejected)}")]
            for key in self.allowed_overrides:
                if key in msg:
                    self.overrides[key] = msg[key]
            return [self._reply(type="config", ok=True)]
        if mtype == "reset":
            env = self._ensure_env()
            obs = env.reset()
            return [self._reply(type="obs", observation=observation_payload(obs))]
        if mtype == "act":
            env = self.env
            if env is None or not env.in_episode:
                return [self._error("reset required")]
            action = msg.get("action")
            if not isinstance(action, (int, float)) or isinstance(action, bool) \
                    or not np.isfinite(action):
                return [self._error("act needs a finite numeric 'action'")]
            self.pacer.pace()
            result = env.step(float(action))
            self._acts += 1
            if result.done:
                self._episodes_done += 1
            payload = dict(
                type="done" if result.done else "result",
                observation=observation_payload(result.observation),
                reward=result.reward,
                done=result.done,
                info={
                    "raw_torque": result.info["raw_torque"],
                    "motor_rate": result.info["motor_rate"],
                    "episode_step": result.info["episode_step"],
                },
            )
            return [self._reply(**payload)]
        if mtype == "bye":
            reply = self._reply(type="bye")
            self.close()
            return [reply]
        return [self._error(f"unknown message type {mtype!r}")]

    def close(self) -> None:
        self.closed = True
        if self.env is not None:
            self.env.close()
        self._write_run_manifest()
        if self._session_log is not None:
            self._session_log.close()
            self._session_log = None

    def _write_run_manifest(self) -> None:
        if self.log_dir is None:
            return
        cfg = self.env.cfg if self.env is not None else self.base_cfg
        wall = time.monotonic() - self._t_start
        virtual = self._acts / cfg.control_rate \
            + self._episodes_done * cfg.stabilization_duration
        manifest = {
            "session_id": self.session_id,
            "config_hash": config_hash(self.fluid, cfg),
            "pacing": self.pacer.mode,
            "wall_time_s": wall,
            "virtual_time_s": virtual,
            "act_count": self._acts,
            "episodes_completed": self._episodes_done,
            "steps_per_episode": cfg.episode_steps,
            "env_steps_raw": self._acts,
            "env_steps_announced": self._episodes_done * ANNOUNCED_STEPS_PER_EPISODE,
        }
        with open(self.log_dir / "run_manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)


class _BridgeServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr, fluid, cfg, pacing, log_dir):
        self.fluid = fluid
        self.cfg = cfg
        self.pacing = pacing
        self.log_dir = log_dir
        self._session_counter = 0
        self._counter_lock = threading.Lock()
        super().__init__(addr, _BridgeHandler)

    def next_session_id(self) -> str:
        with self._counter_lock:
            self._session_counter += 1
            return f"session_{self._session_counter:04d}"


class _BridgeHandler(socketserver.StreamRequestHandler):
    def handle(self):
        server: _BridgeServer = self.server  # type: ignore[assignment]
        session = BridgeSession(
            server.fluid,
            server.cfg,
            pacing=server.pacing,
            log_dir=server.log_dir,
            session_id=server.next_session_id(),
        )
        try:
            while not session.closed:
                line = self.rfile.readline(MAX_LINE_BYTES + 1)
                if not line:
                    break
                for reply in session.handle_line(line):
                    self.wfile.write((reply + "\n").encode("utf-8"))
        except (ConnectionError, BrokenPipeError):
            pass
        finally:
            session.close()


def serve(
    endpoint: str,
    fluid: FluidConfig,
    cfg: EnvConfig,
    pacing: str = "fast",
    log_dir=None,
    ready_callback=None,
):
    """Serve sessions forever on ``host:port``, or one session on ``stdio``.

    Every connection gets its own environment instance on its own thread.
    ``ready_callback(host, port)`` fires once the socket is bound, which lets
    callers discover an ephemeral port.
    """
    if endpoint == "stdio":
        session = BridgeSession(fluid, cfg, pacing=pacing, log_dir=log_dir, session_id="stdio")
        out = sys.stdout
        for raw in sys.stdin:
            for reply in session.handle_line(raw):
                out.write(reply + "\n")
                out.flush()
            if session.closed:
                break
        session.close()
        return None

    host, _, port_text = endpoint.rpartition(":")
    if not host:
        raise ValueError("endpoint must be 'host:port' or 'stdio'")
    server = _BridgeServer((host, int(port_text)), fluid, cfg, pacing, log_dir)
    bound = server.server_address
    if ready_callback is not None:
        ready_callback(bound[0], bound[1])
    try:
        server.serve_forever(poll_interval=0.1)
    finally:
        server.server_close()
    return server
