"""Thin synchronous client over the engine's newline-delimited protocol.

The client never computes geometry or rewards: every call is a protocol
round-trip and responses come back as plain dicts with wire field names
unchanged. A background reader demultiplexes responses by request id, so
one connection supports pipelined batches and multiple worker threads.
"""

from __future__ import annotations

import json
import math
import shutil
import socket
import subprocess
import sys
import threading


class EngineError(Exception):
    """The engine answered with ok=false (in-band failure)."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class TransportError(Exception):
    """The connection or server process failed (no answer at all)."""


def format_float(x: float) -> str:
    """Wire float encoding: decimal with 9 significant digits."""
    if math.isnan(x) or math.isinf(x):
        raise ValueError(f"non-finite float not serializable: {x!r}")
    s = format(x, ".9g")
    if "e" not in s and "E" not in s and "." not in s:
        s += ".0"
    return s


def _encode(obj, out):
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, (k, v) in enumerate(obj.items()):
            if i:
                out.append(",")
            out.append(json.dumps(k, ensure_ascii=False))
            out.append(":")
            _encode(v, out)
        out.append("}")
    else:
        raise TypeError(f"not JSON-serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    """Serialize exactly as the engine does (stable floats, kept key order)."""
    out = []
    _encode(obj, out)
    return "".join(out)


DEFAULT_COMMAND = ("spatialenv", "serve")


class EnvClient:
    """One protocol connection with id-demultiplexed responses."""

    def __init__(self, reader, writer, proc=None, sock=None):
        self._reader = reader
        self._writer = writer
        self._proc = proc
        self._sock = sock
        self._write_lock = threading.Lock()
        self._cond = threading.Condition()
        self._pending: dict[str, dict] = {}
        self._counter = 0
        self._closed = False
        self._eof = False
        self._reader_thread = threading.Thread(target=self._read_loop,
                                               daemon=True)
        self._reader_thread.start()

    # -- lifecycle ---------------------------------------------------------

    def _read_loop(self):
        try:
            for line in self._reader:
                line = line.strip()
                if not line:
                    continue
                try:
                    response = json.loads(line)
                except json.JSONDecodeError:
                    continue
                with self._cond:
                    self._pending[response.get("id", "")] = response
                    self._cond.notify_all()
        except (ValueError, OSError):
            pass
        finally:
            with self._cond:
                self._eof = True
                self._cond.notify_all()

    def close(self):
        if self._closed:
            return
        self._closed = True
        try:
            self._writer.close()
        except OSError:
            pass
        if self._proc is not None:
            try:
                self._proc.wait(timeout=10)
            except subprocess.TimeoutExpired:
                self._proc.kill()
        if self._sock is not None:
            try:
                self._sock.close()
            except OSError:
                pass
        self._reader_thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()

    # -- core request path --------------------------------------------------

    def _next_id(self) -> str:
        with self._write_lock:
            self._counter += 1
            return f"c{self._counter}"

    def _send(self, rid: str, op: str, payload: dict):
        line = dumps({"id": rid, "op": op, "payload": payload}) + "\n"
        with self._write_lock:
            if self._closed:
                raise TransportError("client is closed")
            try:
                self._writer.write(line)
                self._writer.flush()
            except (OSError, ValueError, BrokenPipeError) as exc:
                raise TransportError(f"write failed: {exc}") from exc

    def _wait(self, rid: str, timeout: float | None) -> dict:
        with self._cond:
            while rid not in self._pending:
                if self._eof:
                    raise TransportError("connection closed before response")
                if not self._cond.wait(timeout=timeout):
                    raise TransportError(f"timed out waiting for {rid}")
            return self._pending.pop(rid)

    def request(self, op: str, payload: dict | None = None,
                timeout: float | None = 60.0) -> dict:
        """One round-trip; returns the result record or raises EngineError."""
        rid = self._next_id()
        self._send(rid, op, payload or {})
        response = self._wait(rid, timeout)
        if not response.get("ok"):
            err = response.get("error") or {}
            raise EngineError(err.get("code", "unknown"),
                              err.get("message", ""))
        return response["result"]

    def batch(self, requests, timeout: float | None = 120.0) -> list:
        """Pipelined batch: every request is written before any response is
        awaited; results come back in request order. In-band failures are
        returned as EngineError instances rather than raised, so one bad
        request cannot hide the others."""
        rids = []
        for op, payload in requests:
            rid = self._next_id()
            self._send(rid, op, payload or {})
            rids.append(rid)
        results = []
        for rid in rids:
            response = self._wait(rid, timeout)
            if response.get("ok"):
                results.append(response["result"])
            else:
                err = response.get("error") or {}
                results.append(EngineError(err.get("code", "unknown"),
                                           err.get("message", "")))
        return results

    # -- protocol ops, 1:1 --------------------------------------------------

    def ping(self) -> dict:
        return self.request("ping")

    def load_scene(self, path: str) -> dict:
        return self.request("load_scene", {"path": str(path)})

    def gen_scene(self, seed: int, spec: dict | None = None) -> dict:
        payload = {"seed": int(seed)}
        if spec:
            payload["spec"] = spec
        return self.request("gen_scene", payload)

    def verify(self, scene_id: str, task: str, text: str | None = None,
               params: dict | None = None, frame_ids=()) -> dict:
        payload = {"scene_id": scene_id, "task": task,
                   "frame_ids": list(frame_ids)}
        if text is not None:
            payload["text"] = text
        if params is not None:
            payload["params"] = params
        return self.request("verify", payload)["verdict"]

    def solve(self, scene_id: str, task: str, params: dict,
              frame_ids=()) -> dict:
        return self.request("solve", {
            "scene_id": scene_id, "task": task, "params": params,
            "frame_ids": list(frame_ids)})

    def score_questioner(self, task: str, text: str, valid: bool,
                         ground_truth: dict | None = None,
                         judge_score: float | None = None) -> dict:
        payload = {"task": task, "text": text, "valid": valid}
        if ground_truth is not None:
            payload["ground_truth"] = ground_truth
        if judge_score is not None:
            payload["judge_score"] = judge_score
        return self.request("score_questioner", payload)["reward"]

    def score_solver(self, task: str, text: str, valid: bool,
                     ground_truth: dict | None = None,
                     diagnostics: dict | None = None) -> dict:
        payload = {"task": task, "text": text, "valid": valid}
        if ground_truth is not None:
            payload["ground_truth"] = ground_truth
        if diagnostics is not None:
            payload["diagnostics"] = diagnostics
        return self.request("score_solver", payload)["reward"]

    def feasible(self, scene_id: str, frame_ids=()) -> list:
        return self.request("feasible", {
            "scene_id": scene_id, "frame_ids": list(frame_ids)})["tasks"]

    def sample_task(self, scene_id: str, frame_ids=(),
                    seed: int | None = None) -> str:
        payload = {"scene_id": scene_id, "frame_ids": list(frame_ids)}
        if seed is not None:
            payload["seed"] = seed
        return self.request("sample_task", payload)["task"]

    def update_stats(self, task: str, accuracy: float, weight: float = 1.0,
                     retained_invalid: bool = False) -> dict:
        return self.request("update_stats", {
            "task": task, "accuracy": accuracy, "weight": weight,
            "retained_invalid": retained_invalid})["stats"]


def _engine_command() -> list[str]:
    exe = shutil.which("spatialenv")
    if exe:
        return [exe, "serve"]
    return [sys.executable, "-m", "spatialenv.cli", "serve"]


def connect(target=None) -> EnvClient:
    """Open a connection.

    target may be None (spawn the default `spatialenv serve` subprocess), a
    command list/string to spawn, or "tcp://host:port".
    """
    if isinstance(target, str) and target.startswith("tcp://"):
        host, _, port = target[len("tcp://"):].rpartition(":")
        try:
            sock = socket.create_connection((host or "127.0.0.1", int(port)),
                                            timeout=30)
        except OSError as exc:
            raise TransportError(f"cannot connect to {target}: {exc}") from exc
        reader = sock.makefile("r", encoding="utf-8")
        writer = sock.makefile("w", encoding="utf-8")
        return EnvClient(reader, writer, sock=sock)
    if target is None:
        command = _engine_command()
    elif isinstance(target, str):
        command = target.split()
    else:
        command = list(target)
    try:
        proc = subprocess.Popen(command, stdin=subprocess.PIPE,
                                stdout=subprocess.PIPE, text=True,
                                bufsize=1)
    except OSError as exc:
        raise TransportError(f"cannot spawn {command!r}: {exc}") from exc
    return EnvClient(proc.stdout, proc.stdin, proc=proc)
