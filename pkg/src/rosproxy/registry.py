"""Per-node proxy state: endpoint records, registration refcounts,
liveness pinging, and resource teardown.

Every node that registers through the proxy gets one record holding its
leased gateway port, its open TCP relays, and the set of names it has
registered. When the last registration goes away a grace timer starts;
when the node stops answering pings it is purged outright. Purging
closes the gateway listener *first* so the advertised port refuses
connections before any other state is torn down — outside observers
never see a port that accepts while the record is already gone.

The proxy never unregisters a purged node at the upstream master; the
refusing port is exactly what standard cleanup probes look for, and
silently deleting registrations behind an operator's back is worse than
leaving a probe-ably dead entry.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass, field
from typing import Awaitable, Callable, Dict, Optional, Set, Tuple

from .http11 import Dialer, RpcTransportError, XmlRpcClient, XmlRpcFaultError
from .ports import PortAllocator, PortLease, PURPOSE_SLAVE_API, PURPOSE_TCPROS
from .relay import RelayHandle, close_relay, open_relay

log = logging.getLogger(__name__)

PING_CALLER_ID = "/rosproxy"

KIND_PUB = "pub"
KIND_SUB = "sub"
KIND_SERVICE = "service"
_KIND_ATTR = {KIND_PUB: "publications", KIND_SUB: "subscriptions", KIND_SERVICE: "services"}


class UnknownNode(Exception):
    """Operation on a caller_id the registry does not know (or just purged)."""


@dataclass
class PingPolicy:
    interval: float = 10.0
    failure_threshold: int = 3

    def __post_init__(self):
        if self.interval <= 0:
            raise ValueError("ping interval must be > 0")
        if self.failure_threshold < 1:
            raise ValueError("failure threshold must be >= 1")


@dataclass
class NodeRecord:
    caller_id: str
    real_slave_uri: str
    gateway_lease: PortLease
    gateway_server: asyncio.AbstractServer = field(repr=False, default=None)
    publications: Set[str] = field(default_factory=set)
    subscriptions: Set[str] = field(default_factory=set)
    services: Set[str] = field(default_factory=set)
    tcpros_relays: Dict[Tuple[str, int], RelayHandle] = field(default_factory=dict)
    ping_failures: int = 0
    created_at: float = 0.0
    last_seen: float = 0.0
    purged: bool = False
    _grace_timer: object = field(repr=False, default=None)

    @property
    def gateway_port(self) -> int:
        return self.gateway_lease.port

    def refcount(self) -> int:
        return len(self.publications) + len(self.subscriptions) + len(self.services)


# async (record) -> listening server bound to the record's gateway port
GatewayFactory = Callable[[NodeRecord], Awaitable[asyncio.AbstractServer]]


class Registry:
    """The shared node map; all mutation goes through one lock."""

    def __init__(
        self,
        allocator: PortAllocator,
        gateway_factory: GatewayFactory,
        *,
        bind_host: str = "",
        grace_period: float = 30.0,
        ping_policy: Optional[PingPolicy] = None,
        rpc_timeout: float = 5.0,
        dial: Optional[Dialer] = None,
    ):
        self.allocator = allocator
        self.gateway_factory = gateway_factory
        self.bind_host = bind_host
        self.grace_period = grace_period
        self.ping_policy = ping_policy or PingPolicy()
        self.rpc_timeout = rpc_timeout
        self.dial = dial
        self.nodes: Dict[str, NodeRecord] = {}
        self._lock = asyncio.Lock()

    # -- lookup ------------------------------------------------------

    def get(self, caller_id: str) -> NodeRecord:
        record = self.nodes.get(caller_id)
        if record is None or record.purged:
            raise UnknownNode(caller_id)
        return record

    def find_by_gateway_port(self, port: int) -> NodeRecord:
        for record in self.nodes.values():
            if record.gateway_lease.port == port and not record.purged:
                return record
        raise UnknownNode("no node on gateway port %d" % port)

    # -- lifecycle ---------------------------------------------------

    async def ensure_node(self, caller_id: str, real_slave_uri: str) -> NodeRecord:
        """Get-or-create the record for caller_id.

        Same id + same URI is idempotent. Same id with a different URI
        means the node restarted: the old resources are purged and a
        fresh record is built. Raises Exhausted (no ports) or BindFailed
        with no partial record left behind.
        """
        async with self._lock:
            existing = self.nodes.get(caller_id)
            if existing is not None and not existing.purged:
                if existing.real_slave_uri == real_slave_uri:
                    return existing
                log.info("node %s moved %s -> %s; recycling its resources",
                         caller_id, existing.real_slave_uri, real_slave_uri)
                await self._purge_locked(existing)

            lease = self.allocator.lease(PURPOSE_SLAVE_API, real_slave_uri, caller_id)
            record = NodeRecord(
                caller_id=caller_id,
                real_slave_uri=real_slave_uri,
                gateway_lease=lease,
            )
            now = asyncio.get_event_loop().time()
            record.created_at = now
            record.last_seen = now
            try:
                record.gateway_server = await self.gateway_factory(record)
            except Exception:
                self.allocator.release(lease)
                raise
            self.nodes[caller_id] = record
            log.info("node %s (%s) -> gateway port %d",
                     caller_id, real_slave_uri, lease.port)
            return record

    def add_registration(self, caller_id: str, kind: str, name: str) -> int:
        """Record a pub/sub/service name; returns the new refcount."""
        record = self.get(caller_id)
        getattr(record, _kind_attr(kind)).add(name)
        self._cancel_grace(record)
        record.last_seen = asyncio.get_event_loop().time()
        return record.refcount()

    def remove_registration(self, caller_id: str, kind: str, name: str) -> int:
        """Drop a name; at refcount 0 the purge grace timer starts."""
        record = self.get(caller_id)
        getattr(record, _kind_attr(kind)).discard(name)
        remaining = record.refcount()
        if remaining == 0:
            self._start_grace(record)
        return remaining

    async def lease_relay(self, caller_id: str, target_host: str, target_port: int) -> RelayHandle:
        """Open (or reuse) a relay owned by caller_id toward target."""
        async with self._lock:
            record = self.get(caller_id)
            key = (target_host, target_port)
            handle = record.tcpros_relays.get(key)
            if handle is not None and not handle.closed:
                return handle
            lease = self.allocator.lease(
                PURPOSE_TCPROS, "%s:%d" % (target_host, target_port), caller_id
            )
            try:
                handle = await open_relay(
                    lease, self.bind_host, target_host, target_port, dial=self.dial
                )
            except Exception:
                self.allocator.release(lease)
                raise
            record.tcpros_relays[key] = handle
            return handle

    async def purge_node(self, caller_id: str) -> None:
        async with self._lock:
            record = self.nodes.get(caller_id)
            if record is None or record.purged:
                raise UnknownNode(caller_id)
            await self._purge_locked(record)

    async def purge_all(self) -> None:
        async with self._lock:
            for record in list(self.nodes.values()):
                if not record.purged:
                    await self._purge_locked(record)

    async def _purge_locked(self, record: NodeRecord) -> None:
        # Order matters: the gateway port must refuse before anything
        # else is released, and the record leaves the map last.
        record.purged = True
        self._cancel_grace(record)
        if record.gateway_server is not None:
            record.gateway_server.close()
            await record.gateway_server.wait_closed()
        for handle in list(record.tcpros_relays.values()):
            await close_relay(handle)
            self.allocator.release(handle.lease)
        record.tcpros_relays.clear()
        self.allocator.release(record.gateway_lease)
        self.nodes.pop(record.caller_id, None)
        log.info("node %s purged (gateway port %d released)",
                 record.caller_id, record.gateway_lease.port)

    # -- refcount grace timer ----------------------------------------

    def _start_grace(self, record: NodeRecord) -> None:
        self._cancel_grace(record)
        loop = asyncio.get_event_loop()

        def fire():
            record._grace_timer = None
            asyncio.ensure_future(self._grace_purge(record.caller_id))

        record._grace_timer = loop.call_later(self.grace_period, fire)
        log.debug("node %s refcount 0; purge in %.1fs unless it re-registers",
                  record.caller_id, self.grace_period)

    def _cancel_grace(self, record: NodeRecord) -> None:
        if record._grace_timer is not None:
            record._grace_timer.cancel()
            record._grace_timer = None

    async def _grace_purge(self, caller_id: str) -> None:
        try:
            record = self.get(caller_id)
        except UnknownNode:
            return
        if record.refcount() != 0:  # re-registered while the timer fired
            return
        try:
            await self.purge_node(caller_id)
        except UnknownNode:
            pass

    # -- liveness ----------------------------------------------------

    async def ping_cycle(self) -> list:
        """One liveness pass. Returns [(caller_id, outcome)] where outcome
        is 'ok', 'failed', or 'purged' (this ping hit the threshold)."""

        async def ping_one(record: NodeRecord):
            client = XmlRpcClient(
                record.real_slave_uri, timeout=self.rpc_timeout, dial=self.dial
            )
            try:
                result = await client.call_ros("getPid", [PING_CALLER_ID])
                ok = result.code == 1
            except (RpcTransportError, XmlRpcFaultError, ValueError):
                ok = False
            if record.purged:
                return None
            if ok:
                record.ping_failures = 0
                record.last_seen = asyncio.get_event_loop().time()
                return record.caller_id, "ok"
            record.ping_failures += 1
            log.warning("ping of %s (%s) failed (%d/%d)",
                        record.caller_id, record.real_slave_uri,
                        record.ping_failures, self.ping_policy.failure_threshold)
            if record.ping_failures >= self.ping_policy.failure_threshold:
                try:
                    await self.purge_node(record.caller_id)
                except UnknownNode:
                    pass
                return record.caller_id, "purged"
            return record.caller_id, "failed"

        snapshot = [r for r in self.nodes.values() if not r.purged]
        results = await asyncio.gather(*(ping_one(r) for r in snapshot))
        return [r for r in results if r is not None]

    async def run_ping_loop(self) -> None:
        """Ping forever at the policy interval (cancel to stop)."""
        while True:
            await asyncio.sleep(self.ping_policy.interval)
            try:
                await self.ping_cycle()
            except Exception:  # pragma: no cover - keep the loop alive
                log.exception("ping cycle blew up; continuing")


def _kind_attr(kind: str) -> str:
    try:
        return _KIND_ATTR[kind]
    except KeyError:
        raise ValueError("unknown registration kind %r (expected pub/sub/service)" % kind)
