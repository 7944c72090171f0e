"""Socket client presenting the wire protocol as a step/reset environment."""

from __future__ import annotations

import base64
import json
import socket
import subprocess
import sys
import time

import numpy as np

from .presets import PresetConfig

PROTOCOL_VERSION = 1


class ProtocolError(RuntimeError):
    pass


def decode_observation(payload: dict) -> dict:
    """Wire observation -> flat numeric dict; flow becomes an (h, w, 2) array."""
    obs = {}
    for key, value in payload.items():
        if key == "flow":
            raw = base64.b64decode(value["data"])
            arr = np.frombuffer(raw, dtype="<f4").astype(np.float64)
            obs["flow"] = arr.reshape(value["h"], value["w"], value["channels"])
        else:
            obs[key] = float(value)
    return obs


class RemoteDragEnv:
    """One live session against a served channel; reset/step/close.

    Actions are scalars in [-1, 1]. ``step`` returns (obs, reward, done, info)
    with observations as returned by :func:`decode_observation`.
    """

    def __init__(self, endpoint: str, preset: PresetConfig | None = None, timeout: float = 120.0):
        host, _, port = endpoint.rpartition(":")
        if not host:
            raise ValueError("endpoint must be 'host:port'")
        try:
            self._sock = socket.create_connection((host, int(port)), timeout=timeout)
        except OSError as err:
            raise ConnectionError(f"cannot reach server at {endpoint}: {err}") from err
        self._rfile = self._sock.makefile("rb")
        self._seq = -1
        self.preset = preset or PresetConfig()
        reply = self._request(type="hello", version=PROTOCOL_VERSION)
        if reply.get("type") != "hello" or reply.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(f"version negotiation failed: {reply}")
        reply = self._request(
            type="config",
            observation_set=self.preset.observation_set(),
            task=self.preset.task,
        )
        if not reply.get("ok"):
            raise ProtocolError(f"configuration rejected: {reply}")

    def _request(self, **fields) -> dict:
        self._seq += 1
        fields["seq"] = self._seq
        self._sock.sendall((json.dumps(fields) + "\n").encode())
        line = self._rfile.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        reply = json.loads(line)
        if reply.get("type") == "error":
            raise ProtocolError(reply.get("error", "unknown server error"))
        return reply

    def reset(self) -> dict:
        reply = self._request(type="reset")
        if reply.get("type") != "obs":
            raise ProtocolError(f"unexpected reset reply: {reply}")
        return decode_observation(reply["observation"])

    def step(self, action: float):
        reply = self._request(type="act", action=float(action))
        if reply.get("type") not in ("result", "done"):
            raise ProtocolError(f"unexpected act reply: {reply}")
        obs = decode_observation(reply["observation"])
        return obs, float(reply["reward"]), bool(reply["done"]), reply.get("info", {})

    def close(self) -> None:
        try:
            self._request(type="bye")
        except (ConnectionError, ProtocolError, OSError):
            pass
        finally:
            self._rfile.close()
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_env(preset: PresetConfig | str, endpoint: str) -> RemoteDragEnv:
    """Connect to a served channel and negotiate the preset's observations."""
    if isinstance(preset, str):
        preset = PresetConfig(name=preset)
    return RemoteDragEnv(endpoint, preset)


class ServerProcess:
    """Launches ``python -m cyldrag serve`` and discovers its port."""

    def __init__(self, env_file=None, pacing: str = "fast", profile: str = "desk",
                 log_dir=None, timeout: float = 120.0):
        cmd = [sys.executable, "-m", "cyldrag", "serve", "--addr", "127.0.0.1:0",
               "--pacing", pacing]
        if profile == "desk":
            cmd.append("--desk")
        if env_file is not None:
            cmd += ["--env", str(env_file)]
        if log_dir is not None:
            cmd += ["--log-dir", str(log_dir)]
        self.proc = subprocess.Popen(
            cmd, stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True,
        )
        self.endpoint = None
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            line = self.proc.stdout.readline()
            if not line:
                break
            if line.startswith("listening on "):
                self.endpoint = line.split("listening on ", 1)[1].strip()
                return
        self.stop()
        raise ConnectionError("server did not come up")

    def stop(self) -> None:
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()
