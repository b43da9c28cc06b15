import base64
import json
import socket
import threading
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from examforge.backend import EmbeddedBackend, svg_histogram
from examforge.client import (
    BackendEvalError,
    BackendPool,
    PoolCapacityError,
    WorkspaceClosed,
    WorkspaceConnection,
)
from examforge.expr import ImageValue
from examforge.protocol import (
    CloseRequest,
    ErrorReply,
    EvalRequest,
    OpenRequest,
    ProtocolError,
    ValueReply,
    WorkspaceReply,
    decode_frame,
    encode_frame,
)


@pytest.fixture(scope="module")
def backend():
    with EmbeddedBackend(seed=1234) as be:
        yield be


@pytest.fixture()
def pool(backend):
    p = BackendPool(backend.address, scratch_root=backend.scratch_root)
    yield p
    p.close_all()


# -- frame encoding -----------------------------------------------------------


def test_open_request_exact_bytes():
    assert encode_frame(OpenRequest()) == b'{"op":"open"}\n'


def test_value_reply_exact_bytes():
    assert (
        encode_frame(ValueReply("number", 0.5))
        == b'{"ok":true,"type":"number","value":0.5}\n'
    )


def test_truncated_line_is_decode_error():
    with pytest.raises(ProtocolError):
        decode_frame(b'{"op":"open"')


def test_unknown_op_is_decode_error():
    with pytest.raises(ProtocolError):
        decode_frame(b'{"op":"destroy"}')


_frames = st.one_of(
    st.just(OpenRequest()),
    st.builds(EvalRequest, st.text(max_size=40), st.text(max_size=200)),
    st.builds(CloseRequest, st.text(max_size=40)),
    st.builds(WorkspaceReply, st.text(max_size=40)),
    st.builds(ValueReply, st.just("number"), st.floats(allow_nan=False, allow_infinity=False)),
    st.builds(ValueReply, st.just("integer"), st.integers(min_value=-(2**53), max_value=2**53)),
    st.builds(ValueReply, st.just("boolean"), st.booleans()),
    st.builds(ValueReply, st.just("string"), st.text(max_size=120)),
    st.builds(
        ValueReply,
        st.just("vector"),
        st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=8),
    ),
    st.builds(
        ErrorReply,
        st.sampled_from(["parse", "domain", "unbound", "no-such-workspace", "malformed"]),
        st.text(max_size=120),
    ),
)


@settings(max_examples=400, deadline=None)
@given(_frames)
def test_encode_decode_identity(frame):
    assert decode_frame(encode_frame(frame)) == frame


# -- workspace lifecycle ------------------------------------------------------


def test_assignment_persists_across_evals(pool):
    conn = pool.acquire("s1", "e1")
    conn.eval("k := 3")
    assert conn.eval("k^2") == 9
    pool.close("s1", "e1")


def test_vector_assignment_and_len(pool):
    conn = pool.acquire("s2", "e1")
    conn.eval("s := rnormv(30, 10, 2)")
    assert conn.eval("len(s)") == 30
    pool.close("s2", "e1")


def test_plot_returns_svg_image_and_writes_scratch(pool, backend):
    conn = pool.acquire("s3", "e1")
    conn.eval("s := rnormv(25, 0, 1)")
    img = conn.eval("plot_histogram(s)")
    assert isinstance(img, ImageValue)
    assert img.media_type == "image/svg+xml"
    assert img.data.startswith(b"<svg")
    scratch = backend.scratch_root / conn.workspace_id
    assert scratch.exists() and list(scratch.glob("plot_*.svg"))
    pool.close("s3", "e1")
    assert not scratch.exists()


def test_acquire_returns_existing_connection(pool):
    a = pool.acquire("s4", "e1")
    b = pool.acquire("s4", "e1")
    assert a is b
    pool.close("s4", "e1")


def test_reopen_after_close_gets_fresh_workspace(pool):
    a = pool.acquire("s5", "e1")
    a.eval("k := 41")
    first_ws = a.workspace_id
    pool.close("s5", "e1")
    b = pool.acquire("s5", "e1")
    assert b.workspace_id != first_ws
    with pytest.raises(BackendEvalError) as exc:
        b.eval("k")
    assert exc.value.kind == "unbound"
    pool.close("s5", "e1")


def test_eval_after_close_raises(pool):
    conn = pool.acquire("s6", "e1")
    pool.close("s6", "e1")
    with pytest.raises(WorkspaceClosed):
        conn.eval("1+1")


def test_close_is_idempotent(pool):
    conn = pool.acquire("s7", "e1")
    conn.close()
    conn.close()  # no error


def test_setseed_makes_draws_reproducible(pool):
    a = pool.acquire("s8", "e1")
    a.eval("setseed(99)")
    first = a.eval("rnormv(5, 0, 1)")
    pool.close("s8", "e1")
    b = pool.acquire("s8", "e1")
    b.eval("setseed(99)")
    second = b.eval("rnormv(5, 0, 1)")
    pool.close("s8", "e1")
    assert first == second


def test_error_kinds_from_backend(pool):
    conn = pool.acquire("s9", "e1")
    with pytest.raises(BackendEvalError) as exc:
        conn.eval("1/0")
    assert exc.value.kind == "domain"
    with pytest.raises(BackendEvalError) as exc:
        conn.eval("x +")
    assert exc.value.kind == "parse"
    with pytest.raises(BackendEvalError) as exc:
        conn.eval("nope")
    assert exc.value.kind == "unbound"
    # connection still usable afterwards
    assert conn.eval("2+2") == 4
    pool.close("s9", "e1")


def test_pool_capacity(backend):
    pool = BackendPool(backend.address, capacity=2, idle_timeout=9999)
    pool.acquire("a", "e")
    pool.acquire("b", "e")
    with pytest.raises(PoolCapacityError):
        pool.acquire("c", "e")
    pool.close_all()


def test_pool_evicts_idle_connections(backend):
    pool = BackendPool(backend.address, capacity=2, idle_timeout=0.0)
    pool.acquire("a", "e")
    pool.acquire("b", "e")
    # both are instantly idle, so a third key can claim a slot
    conn = pool.acquire("c", "e")
    assert conn.state == "open"
    pool.close_all()


# -- raw socket behaviours ----------------------------------------------------


def _raw(backend):
    sock = socket.create_connection(backend.address, timeout=10)
    return sock, sock.makefile("rb")


def test_malformed_frame_keeps_connection_usable(backend):
    sock, reader = _raw(backend)
    try:
        sock.sendall(b"this is not json\n")
        reply = decode_frame(reader.readline())
        assert isinstance(reply, ErrorReply) and reply.kind == "malformed"
        sock.sendall(encode_frame(OpenRequest()))
        reply = decode_frame(reader.readline())
        assert isinstance(reply, WorkspaceReply)
    finally:
        sock.close()


def test_pipelined_requests_reply_in_order(backend):
    sock, reader = _raw(backend)
    try:
        sock.sendall(encode_frame(OpenRequest()))
        ws = decode_frame(reader.readline()).ws
        burst = b"".join(encode_frame(EvalRequest(ws, f"{i}+0")) for i in range(100))
        sock.sendall(burst)
        values = [decode_frame(reader.readline()) for _ in range(100)]
        assert [v.value for v in values] == list(range(100))
    finally:
        sock.close()


def test_workspace_isolation_under_concurrency(backend):
    pool = BackendPool(backend.address)
    errors: list[Exception] = []

    def worker(idx: int):
        try:
            conn = pool.acquire(f"iso{idx}", "e")
            conn.eval(f"k := {idx}")
            rng = Random(idx)
            for _ in range(20):
                if rng.random() < 0.5:
                    assert conn.eval("k") == idx
                else:
                    conn.eval(f"v{rng.randint(0, 5)} := {idx} * 10")
            assert conn.eval("k") == idx
        except Exception as exc:  # noqa: BLE001 - surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    pool.close_all()
    assert errors == []


def test_connection_drop_destroys_workspaces(backend):
    sock, reader = _raw(backend)
    sock.sendall(encode_frame(OpenRequest()))
    ws = decode_frame(reader.readline()).ws
    sock.sendall(encode_frame(EvalRequest(ws, "plot_histogram(rnormv(10,0,1))")))
    decode_frame(reader.readline())
    scratch = backend.scratch_root / ws
    assert scratch.exists()
    reader.close()
    sock.close()
    import time

    for _ in range(100):
        if not scratch.exists():
            break
        time.sleep(0.05)
    assert not scratch.exists()


def test_svg_histogram_is_deterministic():
    values = [float(i % 7) for i in range(40)]
    assert svg_histogram(values) == svg_histogram(values)
