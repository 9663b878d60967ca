"""Byte-transparent TCP relaying.

A relay listens on a leased port and, per accepted connection, dials a
fixed target and pumps bytes both ways until both directions reach EOF.
It never inspects payloads: the wire protocols it carries put all
routing information in out-of-band registration calls, so copying bytes
verbatim is sufficient (and keeps the relay oblivious to protocol
versions).

Half-closes are propagated: when one side sends EOF the relay forwards
the EOF (write_eof) and keeps the opposite direction flowing, which is
what request/response protocols over raw TCP expect.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field
from typing import Optional, Set

from .http11 import BindFailed, Dialer
from .ports import PortLease

log = logging.getLogger(__name__)

COPY_CHUNK = 64 * 1024
CLOSE_GRACE = 1.0  # seconds to let in-flight connections die on close


@dataclass
class RelayHandle:
    """A live relay: listener plus connection bookkeeping."""

    lease: PortLease
    bind_host: str
    target_host: str
    target_port: int
    server: asyncio.AbstractServer = field(repr=False, default=None)
    accepted_total: int = 0
    bytes_in: int = 0   # client -> target
    bytes_out: int = 0  # target -> client
    closed: bool = False
    _conn_tasks: Set[asyncio.Task] = field(default_factory=set, repr=False)

    @property
    def port(self) -> int:
        return self.lease.port

    def connection_count(self) -> int:
        return len(self._conn_tasks)


async def _pump(reader, writer, handle: RelayHandle, inbound: bool) -> None:
    """Copy reader -> writer until EOF, then forward the EOF."""
    while True:
        chunk = await reader.read(COPY_CHUNK)
        if not chunk:
            break
        if inbound:
            handle.bytes_in += len(chunk)
        else:
            handle.bytes_out += len(chunk)
        writer.write(chunk)
        await writer.drain()
    try:
        if writer.can_write_eof():
            writer.write_eof()
    except (ConnectionError, OSError, RuntimeError):
        pass  # peer already gone; EOF is moot


async def _serve_connection(
    client_reader, client_writer, handle: RelayHandle, dial: Optional[Dialer]
) -> None:
    handle.accepted_total += 1
    try:
        if dial is not None:
            target_reader, target_writer = await dial(handle.target_host, handle.target_port)
        else:
            target_reader, target_writer = await asyncio.open_connection(
                handle.target_host, handle.target_port
            )
    except (ConnectionError, OSError) as exc:
        # Target gone: the honest translation is to hang up promptly.
        log.debug("relay :%d target %s:%d refused: %s",
                  handle.port, handle.target_host, handle.target_port, exc)
        client_writer.close()
        try:
            await client_writer.wait_closed()
        except (ConnectionError, OSError):
            pass
        return

    pumps = (
        asyncio.ensure_future(_pump(client_reader, target_writer, handle, inbound=True)),
        asyncio.ensure_future(_pump(target_reader, client_writer, handle, inbound=False)),
    )
    try:
        await asyncio.gather(*pumps)
    except (ConnectionError, OSError, asyncio.IncompleteReadError):
        # One leg broke: abort both so neither peer waits on a dead pipe.
        pass
    finally:
        for task in pumps:
            task.cancel()
        await asyncio.gather(*pumps, return_exceptions=True)
        for w in (client_writer, target_writer):
            w.close()
        for w in (client_writer, target_writer):
            try:
                await w.wait_closed()
            except (ConnectionError, OSError):
                pass


async def open_relay(
    lease: PortLease,
    bind_host: str,
    target_host: str,
    target_port: int,
    *,
    dial: Optional[Dialer] = None,
) -> RelayHandle:
    """Start listening on the leased port, relaying to target_host:port."""
    handle = RelayHandle(
        lease=lease,
        bind_host=bind_host,
        target_host=target_host,
        target_port=target_port,
    )

    def on_connection(reader, writer):
        if handle.closed:
            writer.close()
            return
        task = asyncio.ensure_future(_serve_connection(reader, writer, handle, dial))
        handle._conn_tasks.add(task)
        task.add_done_callback(handle._conn_tasks.discard)

    try:
        handle.server = await asyncio.start_server(on_connection, bind_host or None, lease.port)
    except OSError as exc:
        raise BindFailed("cannot bind relay %s:%d: %s" % (bind_host or "*", lease.port, exc)) from exc
    log.debug("relay up: %s:%d -> %s:%d", bind_host, lease.port, target_host, target_port)
    return handle


async def close_relay(handle: RelayHandle) -> None:
    """Stop accepting, tear down in-flight connections, idempotent."""
    if handle.closed:
        return
    handle.closed = True
    if handle.server is not None:
        handle.server.close()
        await handle.server.wait_closed()
    tasks = list(handle._conn_tasks)
    for task in tasks:
        task.cancel()
    if tasks:
        _, pending = await asyncio.wait(tasks, timeout=CLOSE_GRACE)
        for _task in pending:  # pragma: no cover - defensive
            log.warning("relay :%d connection refused to die within %.1fs",
                        handle.port, CLOSE_GRACE)
    log.debug("relay down: %s:%d", handle.bind_host, handle.port)
