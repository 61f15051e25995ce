import io
import json
import socket
import struct
import sys
import threading

import numpy as np
import pytest

from streamst.bridge import (
    MAX_MESSAGE_BYTES,
    BridgeModel,
    StdioTransport,
    TcpTransport,
    open_endpoint,
    read_frame,
    write_frame,
)
from streamst.mock import MockModel
from streamst.types import (
    DecodeRequest,
    FeatureSequence,
    InputError,
    TransportError,
    decode,
)

from helpers import frames, scripted


# --- framing ---

def test_frame_round_trip():
    buf = io.BytesIO()
    payload = {"max_new": 4, "prefix_ids": [1, 2], "frame_ms": 40.0}
    write_frame(buf, payload)
    buf.seek(0)
    assert read_frame(buf) == payload


def test_read_frame_rejects_truncated_header():
    with pytest.raises(TransportError):
        read_frame(io.BytesIO(b"\x00\x00"))


def test_read_frame_rejects_truncated_body():
    buf = io.BytesIO(struct.pack(">I", 100) + b"{}")
    with pytest.raises(TransportError):
        read_frame(buf)


def test_read_frame_rejects_oversize_frame():
    buf = io.BytesIO(struct.pack(">I", MAX_MESSAGE_BYTES + 1))
    with pytest.raises(TransportError):
        read_frame(buf)


def test_read_frame_rejects_invalid_json():
    body = b"not json at all"
    buf = io.BytesIO(struct.pack(">I", len(body)) + body)
    with pytest.raises(TransportError):
        read_frame(buf)


def test_read_frame_rejects_non_object():
    body = b"[1,2,3]"
    buf = io.BytesIO(struct.pack(">I", len(body)) + body)
    with pytest.raises(TransportError):
        read_frame(buf)


# --- client response handling over a fake transport ---

class CannedTransport:
    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def roundtrip(self, payload):
        self.requests.append(payload)
        return self.responses.pop(0)

    def close(self):
        pass


def valid_response(n_tokens=2, n_frames=3):
    return {
        "token_ids": list(range(n_tokens)),
        "surfaces": [f"s{i}" for i in range(n_tokens)],
        "begins_word": [True] * n_tokens,
        "attention": (np.full((n_tokens, n_frames), 1.0 / n_frames)).tolist(),
        "compute_ms": 2.5,
    }


def test_bridge_model_builds_request_and_result():
    transport = CannedTransport([valid_response()])
    model = BridgeModel(transport, attention_layer=4)
    result = decode(DecodeRequest(frames(3, width=2), max_new_tokens=8), model)
    sent = transport.requests[0]
    assert sent["frame_ms"] == 40.0
    assert sent["prefix_ids"] == []
    assert sent["max_new"] == 8
    assert len(sent["features"]) == 3 and len(sent["features"][0]) == 2
    assert [t.surface for t in result.tokens] == ["s0", "s1"]
    assert result.compute_cost_ms == 2.5
    assert result.attention.layer_index == 4


def test_bridge_model_maps_error_responses():
    transport = CannedTransport([{"error": {"message": "model exploded"}}])
    model = BridgeModel(transport)
    with pytest.raises(TransportError, match="model exploded"):
        model.decode(DecodeRequest(frames(3)))


def test_bridge_model_rejects_missing_keys():
    bad = valid_response()
    del bad["attention"]
    model = BridgeModel(CannedTransport([bad]))
    with pytest.raises(TransportError, match="missing"):
        model.decode(DecodeRequest(frames(3)))


def test_bridge_model_rejects_length_mismatch():
    bad = valid_response()
    bad["surfaces"] = bad["surfaces"][:-1]
    model = BridgeModel(CannedTransport([bad]))
    with pytest.raises(TransportError):
        model.decode(DecodeRequest(frames(3)))


def test_bridge_model_rejects_wrong_prefix_echo():
    response = valid_response()
    response["token_ids"] = [5, 6]
    model = BridgeModel(CannedTransport([response]))
    prefix = [t for t in
              scripted([("a", ["a"], [0], 0)]).script_tokens()]
    with pytest.raises(TransportError, match="echo"):
        model.decode(DecodeRequest(frames(3), forced_prefix=prefix))


def test_bridge_model_rejects_negative_compute():
    bad = valid_response()
    bad["compute_ms"] = -1
    model = BridgeModel(CannedTransport([bad]))
    with pytest.raises(TransportError):
        model.decode(DecodeRequest(frames(3)))


def test_decode_contract_catches_bad_attention_from_bridge():
    bad = valid_response()
    bad["attention"] = [[0.9, 0.9, 0.9], [0.1, 0.1, 0.1]]  # rows not normal
    model = BridgeModel(CannedTransport([bad]))
    with pytest.raises(InputError):
        decode(DecodeRequest(frames(3)), model)


# --- endpoint parsing ---

def test_open_endpoint_rejects_malformed_specs():
    with pytest.raises(InputError):
        open_endpoint("tcp:nohost")
    with pytest.raises(InputError):
        open_endpoint("stdio:   ")
    with pytest.raises(InputError):
        open_endpoint("carrier-pigeon:coop")


def test_tcp_transport_connection_refused():
    with pytest.raises(TransportError):
        TcpTransport("127.0.0.1", 1, timeout_s=2)


# --- a real loopback server wrapping the mock model ---

def serve_mock(model: MockModel, sock: socket.socket):
    """Minimal protocol responder used to exercise the client for real."""

    def handle(conn):
        stream = conn.makefile("rwb")
        try:
            while True:
                try:
                    request = read_frame(stream)
                except TransportError:
                    return  # client went away
                try:
                    response = answer(request)
                except Exception as exc:  # -> protocol error response
                    response = {"error": {"message": str(exc)}}
                write_frame(stream, response)
        finally:
            stream.close()
            conn.close()

    def answer(request):
        script = model.scenario.script_tokens()
        prefix = [script[i] for i in request["prefix_ids"]]
        feats = FeatureSequence(
            np.asarray(request["features"], dtype=np.float32).reshape(
                -1, model.feature_width),
            request["frame_ms"])
        result = model.decode(DecodeRequest(feats, prefix, request["max_new"]))
        return {
            "token_ids": [t.token_id for t in result.tokens],
            "surfaces": [t.surface for t in result.tokens],
            "begins_word": [t.begins_word for t in result.tokens],
            "attention": result.attention.scores.tolist(),
            "compute_ms": result.compute_cost_ms,
        }

    while True:
        try:
            conn, _ = sock.accept()
        except OSError:
            return
        threading.Thread(target=handle, args=(conn,), daemon=True).start()


@pytest.fixture
def mock_server():
    scenario = scripted([
        ("rio", ["rio"], [1], 0),
        ("alto", ["al", "to"], [4, 5], 0),
    ], noise=0.0, compute_cost_ms=3.0)
    model = MockModel(scenario)
    sock = socket.create_server(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    thread = threading.Thread(target=serve_mock, args=(model, sock),
                              daemon=True)
    thread.start()
    yield model, port
    sock.close()


def test_bridge_over_real_socket_matches_direct_decode(mock_server):
    model, port = mock_server
    bridge = BridgeModel(TcpTransport("127.0.0.1", port))
    try:
        request = DecodeRequest(frames(8), max_new_tokens=16)
        direct = decode(request, model)
        remote = decode(request, bridge)
        assert remote.tokens == direct.tokens
        np.testing.assert_allclose(remote.attention.scores,
                                   direct.attention.scores)
        assert remote.compute_cost_ms == direct.compute_cost_ms
        # Forced-prefix round trip too.
        request2 = DecodeRequest(frames(8), forced_prefix=direct.tokens[:1])
        assert decode(request2, bridge).tokens == decode(request2, model).tokens
    finally:
        bridge.close()


def test_bridge_over_real_socket_error_response(mock_server):
    _, port = mock_server
    bridge = BridgeModel(TcpTransport("127.0.0.1", port))
    try:
        script = scripted([("rio", ["rio"], [1], 0),
                           ("alto", ["al", "to"], [4, 5], 0)]).script_tokens()
        gappy = [script[0], script[2]]  # non-contiguous prefix
        with pytest.raises(TransportError, match="backend error"):
            bridge.decode(DecodeRequest(frames(8), forced_prefix=gappy))
    finally:
        bridge.close()


# --- stdio transport against a child process ---

STDIO_SERVER = r"""
import json, struct, sys
stdin, stdout = sys.stdin.buffer, sys.stdout.buffer
while True:
    header = stdin.read(4)
    if len(header) < 4:
        break
    (n,) = struct.unpack(">I", header)
    request = json.loads(stdin.read(n))
    k = len(request["prefix_ids"])
    ids = request["prefix_ids"] + [k]
    frames = max(len(request["features"]), 1)
    row = [1.0 / frames] * frames
    response = {
        "token_ids": ids,
        "surfaces": ["tok%d" % i for i in ids],
        "begins_word": [True] * len(ids),
        "attention": [row for _ in ids],
        "compute_ms": 1.0,
    }
    body = json.dumps(response).encode()
    stdout.write(struct.pack(">I", len(body)) + body)
    stdout.flush()
"""


def test_stdio_transport_round_trip(tmp_path):
    server = tmp_path / "echo_server.py"
    server.write_text(STDIO_SERVER)
    transport = open_endpoint(f"stdio:{sys.executable} -u {server}")
    try:
        model = BridgeModel(transport)
        result = model.decode(DecodeRequest(frames(2, width=2)))
        assert [t.surface for t in result.tokens] == ["tok0"]
        assert result.compute_cost_ms == 1.0
        # prefix comes back in front of the continuation
        result2 = model.decode(
            DecodeRequest(frames(2, width=2), forced_prefix=result.tokens))
        assert [t.token_id for t in result2.tokens] == [0, 1]
    finally:
        transport.close()


def test_stdio_transport_detects_dead_child():
    transport = StdioTransport(f"{sys.executable} -c 'pass'")
    try:
        import time
        time.sleep(0.3)
        with pytest.raises(TransportError):
            transport.roundtrip({"x": 1})
    finally:
        transport.close()
