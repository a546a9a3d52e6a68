"""Client-insurer channel: one TLV message per 4-byte length-prefixed frame.

Two interchangeable channels: an in-process dispatch for deterministic
simulation, and a TCP channel talking to a served insurer.  The channel's
authentication is assumed deniable and is not modeled; both channels are
plain byte pipes (see README).
"""

import socket
import socketserver
import threading
import time

from . import wire
from .errors import CIError, EncodingError
from .insurer import EXCEPTION_BY_CODE, Insurer, handle_request


def _raise_error_response(body: bytes) -> None:
    raw = wire.fields(body, wire.TAG_UINT, wire.TAG_TEXT)
    code = wire.decode_u64(raw[0])
    message = wire.decode_text(raw[1])
    raise EXCEPTION_BY_CODE.get(code, CIError)(message)


def unwrap_response(response: bytes) -> bytes:
    """Return the OK payload or raise the transported error."""
    tag, body, end = wire.unpack(response)
    if end != len(response):
        raise EncodingError("trailing bytes after response")
    if tag == wire.RESP_OK:
        return body
    if tag == wire.RESP_ERR:
        _raise_error_response(body)
    raise EncodingError(f"unknown response tag 0x{tag:02x}")


class InProcessChannel:
    """Direct dispatch into an insurer instance; now_fn supplies its clock."""

    def __init__(self, insurer: Insurer, now_fn=time.time):
        self.insurer = insurer
        self.now_fn = now_fn

    def request(self, payload: bytes) -> bytes:
        return unwrap_response(handle_request(self.insurer, payload, int(self.now_fn())))

    def close(self) -> None:
        pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise EncodingError("connection closed mid-frame")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class SocketChannel:
    """Framed request/response over TCP."""

    def __init__(self, host: str, port: int):
        self._sock = socket.create_connection((host, port))

    def request(self, payload: bytes) -> bytes:
        self._sock.sendall(wire.frame(payload))
        response = wire.read_frame(lambda n: _recv_exact(self._sock, n))
        return unwrap_response(response)

    def close(self) -> None:
        self._sock.close()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock = self.request
        while True:
            try:
                payload = wire.read_frame(lambda n: _recv_exact(sock, n))
            except EncodingError:
                return
            response = handle_request(
                self.server.insurer, payload, int(self.server.now_fn())
            )
            sock.sendall(wire.frame(response))


class InsurerServer(socketserver.ThreadingTCPServer):
    """Serves one insurer over TCP; handles concurrent client connections."""

    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, insurer: Insurer, host: str = "127.0.0.1", port: int = 0,
                 now_fn=time.time):
        super().__init__((host, port), _Handler)
        self.insurer = insurer
        self.now_fn = now_fn

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]

    def serve_in_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread
