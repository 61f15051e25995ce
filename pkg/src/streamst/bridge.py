"""Client for an external decode backend speaking the wire protocol.

Framing: every message is a 4-byte big-endian unsigned length followed by
that many bytes of UTF-8 JSON. Requests carry the feature window, frame
duration, forced-prefix token ids, and the continuation cap; responses carry
the full token sequence (prefix echoed first), per-token attention rows over
the input frames, and the backend's compute cost. An ``{"error": {...}}``
response maps to a TransportError.

The backend is stateless per request, so it can live behind a TCP socket or
the stdio of a child process; both are supported here.
"""

from __future__ import annotations

import json
import shlex
import socket
import struct
import subprocess
from typing import BinaryIO

import numpy as np

from .types import (
    AttentionMatrix,
    DecodeRequest,
    DecodeResult,
    InputError,
    TokenRecord,
    TransportError,
)

MAX_MESSAGE_BYTES = 64 * 1024 * 1024
_HEADER = struct.Struct(">I")

RESPONSE_KEYS = ("token_ids", "surfaces", "begins_word", "attention", "compute_ms")


def write_frame(stream: BinaryIO, payload: dict) -> None:
    body = json.dumps(payload, separators=(",", ":")).encode("utf-8")
    if len(body) > MAX_MESSAGE_BYTES:
        raise TransportError(f"message of {len(body)} bytes exceeds the frame cap")
    stream.write(_HEADER.pack(len(body)) + body)
    stream.flush()


def read_frame(stream: BinaryIO) -> dict:
    header = _read_exact(stream, _HEADER.size)
    (length,) = _HEADER.unpack(header)
    if length > MAX_MESSAGE_BYTES:
        raise TransportError(f"frame of {length} bytes exceeds the frame cap")
    body = _read_exact(stream, length)
    try:
        message = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TransportError(f"backend sent invalid JSON: {exc}") from exc
    if not isinstance(message, dict):
        raise TransportError("backend message must be a JSON object")
    return message


def _read_exact(stream: BinaryIO, count: int) -> bytes:
    chunks = []
    remaining = count
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            raise TransportError("backend closed the connection mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class StdioTransport:
    """Runs the backend as a child process and frames over its stdio."""

    def __init__(self, command: str):
        self._proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
        )

    def roundtrip(self, payload: dict) -> dict:
        assert self._proc.stdin and self._proc.stdout
        if self._proc.poll() is not None:
            raise TransportError("backend process has exited")
        try:
            write_frame(self._proc.stdin, payload)
            return read_frame(self._proc.stdout)
        except BrokenPipeError as exc:
            raise TransportError("backend process closed its pipe") from exc

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class TcpTransport:
    """Frames over a TCP connection to an already-running backend."""

    def __init__(self, host: str, port: int, timeout_s: float = 30.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout_s)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._stream = self._sock.makefile("rwb")

    def roundtrip(self, payload: dict) -> dict:
        try:
            write_frame(self._stream, payload)
            return read_frame(self._stream)
        except OSError as exc:
            raise TransportError(f"socket error: {exc}") from exc

    def close(self) -> None:
        self._stream.close()
        self._sock.close()


def open_endpoint(endpoint: str):
    """Build a transport from an endpoint spec.

    ``tcp:<host>:<port>`` connects to a running server; ``stdio:<command>``
    spawns the command and talks over its pipes.
    """
    if endpoint.startswith("tcp:"):
        rest = endpoint[len("tcp:"):]
        host, sep, port = rest.rpartition(":")
        if not sep or not port.isdigit():
            raise InputError(f"bad tcp endpoint {endpoint!r}, want tcp:<host>:<port>")
        return TcpTransport(host or "127.0.0.1", int(port))
    if endpoint.startswith("stdio:"):
        command = endpoint[len("stdio:"):]
        if not command.strip():
            raise InputError("stdio endpoint needs a command")
        return StdioTransport(command)
    raise InputError(f"unknown endpoint {endpoint!r}, want tcp:... or stdio:...")


class BridgeModel:
    """ModelHandle backed by an external backend over the wire protocol."""

    def __init__(self, transport, attention_layer: int = 4,
                 head_reduction: str = "mean"):
        self._transport = transport
        self.attention_layer = attention_layer
        self.head_reduction = head_reduction

    def decode(self, request: DecodeRequest) -> DecodeResult:
        payload = {
            "features": request.features.frames.tolist(),
            "frame_ms": request.features.frame_duration_ms,
            "prefix_ids": [t.token_id for t in request.forced_prefix],
            "max_new": request.max_new_tokens,
        }
        response = self._transport.roundtrip(payload)
        if "error" in response:
            detail = response["error"]
            message = detail.get("message", detail) if isinstance(detail, dict) else detail
            raise TransportError(f"backend error: {message}")
        return self._parse_response(response, request)

    def _parse_response(self, response: dict,
                        request: DecodeRequest) -> DecodeResult:
        missing = [key for key in RESPONSE_KEYS if key not in response]
        if missing:
            raise TransportError(f"backend response missing keys: {missing}")
        token_ids = response["token_ids"]
        surfaces = response["surfaces"]
        begins = response["begins_word"]
        if not (len(token_ids) == len(surfaces) == len(begins)):
            raise TransportError("token_ids/surfaces/begins_word lengths differ")
        prefix_ids = [t.token_id for t in request.forced_prefix]
        if list(token_ids[:len(prefix_ids)]) != prefix_ids:
            raise TransportError("backend did not echo the forced prefix ids")
        tokens = [TokenRecord(int(i), str(s), bool(b))
                  for i, s, b in zip(token_ids, surfaces, begins)]
        try:
            scores = np.asarray(response["attention"], dtype=np.float64)
        except ValueError as exc:
            raise TransportError(f"malformed attention matrix: {exc}") from exc
        if scores.size == 0:
            scores = scores.reshape(0, len(request.features))
        attention = AttentionMatrix(scores, self.attention_layer,
                                    self.head_reduction)
        compute_ms = float(response["compute_ms"])
        if compute_ms < 0:
            raise TransportError("compute_ms must be non-negative")
        return DecodeResult(tokens, attention, compute_ms)

    def close(self) -> None:
        self._transport.close()

    def __enter__(self) -> "BridgeModel":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
