"""Minimal HTTP/1.1 plumbing for XML-RPC over asyncio streams.

Servers accept POST bodies only (any request path; routing is the
caller's concern) and keep connections alive per HTTP/1.1 defaults.
Clients open one connection per call. Both sides require Content-Length;
chunked transfer is out of scope for ROS peers.
"""

from __future__ import annotations

import asyncio
import logging
from typing import Awaitable, Callable, Optional
from urllib.parse import urlsplit

from .xmlrpc_codec import (
    FAULT_APP,
    MAX_MESSAGE_BYTES,
    CodecError,
    MethodCall,
    MethodFault,
    MethodResponse,
    RosResult,
    encode_call,
    encode_response,
    parse_call,
    parse_response,
)

log = logging.getLogger(__name__)

MAX_HEADER_BYTES = 16 * 1024
MAX_HEADER_COUNT = 100

# async (host, port) -> (reader, writer); override point for dial recording
Dialer = Callable[[str, int], Awaitable[tuple]]


class BindFailed(Exception):
    """A listener could not bind its port (occupied outside our control)."""


class RpcTransportError(Exception):
    """The HTTP round trip itself failed (connect, timeout, bad status)."""


class XmlRpcFaultError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__("fault %d: %s" % (code, message))
        self.code = code
        self.message = message


def split_http_uri(uri: str) -> tuple:
    """Return (host, port, path) of an http URI; raise ValueError otherwise."""
    parts = urlsplit(uri)
    if parts.scheme != "http" or not parts.hostname:
        raise ValueError("not an http URI: %r" % uri)
    return parts.hostname, parts.port or 80, parts.path or "/"


def split_rosrpc_uri(uri: str) -> tuple:
    """Return (host, port) of a rosrpc URI; raise ValueError otherwise."""
    parts = urlsplit(uri)
    if parts.scheme != "rosrpc" or not parts.hostname or parts.port is None:
        raise ValueError("not a rosrpc://host:port URI: %r" % uri)
    return parts.hostname, parts.port


async def _read_line(reader, limit=MAX_HEADER_BYTES) -> bytes:
    line = await reader.readline()
    if len(line) > limit:
        raise ValueError("header line too long")
    return line


async def _read_headers(reader) -> dict:
    headers = {}
    while True:
        line = await _read_line(reader)
        if line in (b"\r\n", b"\n"):
            return headers
        if not line:
            raise ConnectionResetError("peer closed mid-headers")
        if len(headers) >= MAX_HEADER_COUNT:
            raise ValueError("too many headers")
        name, sep, value = line.partition(b":")
        if not sep:
            raise ValueError("malformed header line")
        headers[name.strip().lower().decode("latin-1")] = value.strip().decode("latin-1")


def _http_response(status: int, body: bytes, keep_alive: bool) -> bytes:
    reasons = {200: "OK", 400: "Bad Request", 405: "Method Not Allowed",
               411: "Length Required", 413: "Payload Too Large",
               500: "Internal Server Error"}
    head = (
        "HTTP/1.1 %d %s\r\n"
        "Content-Type: text/xml\r\n"
        "Content-Length: %d\r\n"
        "Connection: %s\r\n"
        "\r\n" % (status, reasons.get(status, "Error"), len(body),
                  "keep-alive" if keep_alive else "close")
    )
    return head.encode("latin-1") + body


async def serve_http(
    host: str,
    port: int,
    handler: Callable[[str, bytes, tuple], Awaitable[tuple]],
    *,
    max_body: int = MAX_MESSAGE_BYTES,
) -> asyncio.AbstractServer:
    """Serve POST requests; handler(path, body, peer) returns (status, body).

    Raises BindFailed if the port cannot be bound.
    """

    async def on_connection(reader, writer):
        peer = writer.get_extra_info("peername") or ("?", 0)
        try:
            while True:
                request = await _read_line(reader)
                if not request:
                    break  # clean EOF between requests
                try:
                    method, path, version = request.decode("latin-1").split()
                except ValueError:
                    writer.write(_http_response(400, b"", False))
                    break
                headers = await _read_headers(reader)
                keep_alive = (
                    version.upper() != "HTTP/1.0"
                    and headers.get("connection", "").lower() != "close"
                )
                if method.upper() != "POST":
                    writer.write(_http_response(405, b"", keep_alive))
                    await writer.drain()
                    if keep_alive:
                        continue
                    break
                length_text = headers.get("content-length")
                if length_text is None or not length_text.isdigit():
                    writer.write(_http_response(411, b"", False))
                    break
                length = int(length_text)
                if length > max_body:
                    writer.write(_http_response(413, b"", False))
                    break
                body = await reader.readexactly(length) if length else b""
                try:
                    status, payload = await handler(path, body, peer)
                except Exception:
                    log.exception("unhandled error in HTTP handler for %s", path)
                    status, payload = 500, b""
                writer.write(_http_response(status, payload, keep_alive))
                await writer.drain()
                if not keep_alive:
                    break
        except (asyncio.IncompleteReadError, ConnectionError, ValueError, TimeoutError):
            pass  # broken peer; drop the connection, keep serving others
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    try:
        return await asyncio.start_server(on_connection, host or None, port)
    except OSError as exc:
        raise BindFailed("cannot bind %s:%d: %s" % (host or "*", port, exc)) from exc


def serve_xmlrpc(
    host: str,
    port: int,
    dispatch: Callable[[str, MethodCall, tuple], Awaitable[MethodResponse]],
    *,
    max_body: int = MAX_MESSAGE_BYTES,
):
    """XML-RPC layer over serve_http: parse errors yield 400, handler
    exceptions become application faults."""

    async def handler(path, body, peer):
        try:
            call = parse_call(body, max_bytes=max_body)
        except CodecError as exc:
            return 400, str(exc).encode()
        try:
            response = await dispatch(path, call, peer)
        except Exception as exc:
            log.exception("dispatch of %s failed", call.method_name)
            response = MethodFault(FAULT_APP, "internal error: %s" % exc)
        return 200, encode_response(response)

    return serve_http(host, port, handler, max_body=max_body)


async def http_post(
    host: str,
    port: int,
    path: str,
    body: bytes,
    *,
    timeout: float = 5.0,
    dial: Optional[Dialer] = None,
) -> bytes:
    """POST body to host:port, return the response body.

    Raises RpcTransportError on connect/timeout/non-200 failures.
    """

    async def roundtrip():
        if dial is not None:
            reader, writer = await dial(host, port)
        else:
            reader, writer = await asyncio.open_connection(host, port)
        try:
            head = (
                "POST %s HTTP/1.1\r\n"
                "Host: %s:%d\r\n"
                "Content-Type: text/xml\r\n"
                "Content-Length: %d\r\n"
                "Connection: close\r\n"
                "\r\n" % (path or "/", host, port, len(body))
            )
            writer.write(head.encode("latin-1") + body)
            await writer.drain()
            status_line = await _read_line(reader)
            parts = status_line.decode("latin-1").split(None, 2)
            if len(parts) < 2 or not parts[1].isdigit():
                raise RpcTransportError("bad HTTP status line %r" % status_line)
            status = int(parts[1])
            headers = await _read_headers(reader)
            length_text = headers.get("content-length")
            if length_text is not None and length_text.isdigit():
                payload = await reader.readexactly(int(length_text))
            else:
                payload = await reader.read()
            if status != 200:
                raise RpcTransportError("HTTP status %d" % status)
            return payload
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    try:
        return await asyncio.wait_for(roundtrip(), timeout)
    except RpcTransportError:
        raise
    except asyncio.TimeoutError as exc:
        raise RpcTransportError("timeout after %.1fs posting to %s:%d" % (timeout, host, port)) from exc
    except (ConnectionError, OSError, asyncio.IncompleteReadError, ValueError) as exc:
        raise RpcTransportError("POST to %s:%d failed: %s" % (host, port, exc)) from exc


class XmlRpcClient:
    """One-connection-per-call XML-RPC client.

    dial lets callers observe/override outbound connections; on_response
    sees every raw response body (for traffic inspection in tests).
    """

    def __init__(
        self,
        uri: str,
        *,
        timeout: float = 5.0,
        dial: Optional[Dialer] = None,
        on_response=None,
    ):
        self.uri = uri
        self.host, self.port, self.path = split_http_uri(uri)
        self.timeout = timeout
        self._dial = dial
        self._on_response = on_response

    async def call(self, method: str, params: list) -> MethodResponse:
        body = encode_call(MethodCall(method, list(params)))
        raw = await http_post(
            self.host, self.port, self.path, body,
            timeout=self.timeout, dial=self._dial,
        )
        if self._on_response is not None:
            self._on_response(self.host, self.port, raw)
        try:
            return parse_response(raw)
        except CodecError as exc:
            raise RpcTransportError("unparseable response from %s: %s" % (self.uri, exc)) from exc

    async def call_ros(self, method: str, params: list) -> RosResult:
        """Call and unwrap the ROS (code, statusMessage, value) convention."""
        response = await self.call(method, params)
        if isinstance(response, MethodFault):
            raise XmlRpcFaultError(response.code, response.message)
        try:
            return RosResult.from_value(response.value)
        except ValueError as exc:
            raise RpcTransportError("response from %s is not a ROS result: %s" % (self.uri, exc)) from exc
