"""Per-node XML-RPC ingress on leased gateway ports.

Each proxied node gets its own HTTP listener. Every call arriving there
is forwarded to the node's real endpoint; the one interesting case is
requestTopic, whose successful answer names the node's TCPROS socket —
an address external peers cannot reach. For those we lease (or reuse) a
relay and hand out the advertised host and relay port instead. All
other methods, and any non-TCPROS protocol tuple, pass through
untouched.

A dedicated listener per node (rather than one shared server with
per-node paths) is what makes a purged node's port *refuse TCP
connections* — the signal that standard registration-cleanup probes
rely on.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass
from typing import Optional

from .http11 import (
    Dialer,
    RpcTransportError,
    XmlRpcClient,
    serve_xmlrpc,
)
from .registry import NodeRecord, Registry, UnknownNode
from .xmlrpc_codec import (
    FAULT_APP,
    FAULT_TRANSPORT,
    MethodCall,
    MethodFault,
    MethodResponse,
    MethodSuccess,
    RosResult,
)

log = logging.getLogger(__name__)

TCPROS = "TCPROS"


@dataclass(frozen=True)
class ProtocolParams:
    """The (protocol, host, port) triple a publisher answers requestTopic with."""

    protocol_name: str
    host: str
    port: int

    @classmethod
    def from_value(cls, value) -> "ProtocolParams":
        if (
            not isinstance(value, list)
            or len(value) != 3
            or not isinstance(value[0], str)
            or not isinstance(value[1], str)
            or isinstance(value[2], bool)
            or not isinstance(value[2], int)
        ):
            raise ValueError("not a protocol params triple: %r" % (value,))
        return cls(value[0], value[1], value[2])

    def to_value(self) -> list:
        return [self.protocol_name, self.host, self.port]


class SlaveGatewayManager:
    """Starts per-node listeners and does the requestTopic rewrite."""

    def __init__(
        self,
        registry: Registry,
        advertised_host: str,
        *,
        host_port_offset: int = 0,
        bind_host: str = "",
        rpc_timeout: float = 5.0,
        dial: Optional[Dialer] = None,
    ):
        self.registry = registry
        self.advertised_host = advertised_host
        self.host_port_offset = host_port_offset
        self.bind_host = bind_host
        self.rpc_timeout = rpc_timeout
        self.dial = dial

    def advertised_uri(self, record: NodeRecord) -> str:
        return "http://%s:%d/" % (
            self.advertised_host,
            record.gateway_port + self.host_port_offset,
        )

    def advertised_rosrpc(self, relay_port: int) -> str:
        return "rosrpc://%s:%d" % (
            self.advertised_host,
            relay_port + self.host_port_offset,
        )

    async def start_gateway(self, record: NodeRecord) -> asyncio.AbstractServer:
        """The registry's gateway factory: one XML-RPC listener per node."""
        caller_id = record.caller_id

        async def dispatch(path, call, peer):
            try:
                live = self.registry.get(caller_id)
            except UnknownNode:
                # listener is mid-teardown; in-flight calls get a fault
                return MethodFault(FAULT_APP, "node %s is gone" % caller_id)
            return await self.handle_slave_call(live, call)

        return await serve_xmlrpc(self.bind_host, record.gateway_lease.port, dispatch)

    async def handle_slave_call(self, record: NodeRecord, call: MethodCall) -> MethodResponse:
        client = XmlRpcClient(
            record.real_slave_uri, timeout=self.rpc_timeout, dial=self.dial
        )
        try:
            response = await client.call(call.method_name, call.params)
        except RpcTransportError as exc:
            log.warning("forward of %s to %s failed: %s",
                        call.method_name, record.real_slave_uri, exc)
            return MethodFault(
                FAULT_TRANSPORT, "node %s unreachable: %s" % (record.caller_id, exc)
            )
        if call.method_name == "requestTopic" and isinstance(response, MethodSuccess):
            try:
                return await self._rewrite_request_topic(record, response)
            except ValueError:
                return response  # not the shape we rewrite; hands off
        return response

    async def _rewrite_request_topic(
        self, record: NodeRecord, response: MethodSuccess
    ) -> MethodResponse:
        result = RosResult.from_value(response.value)  # ValueError if foreign shape
        if result.code != 1:
            return response
        params = ProtocolParams.from_value(result.value)
        if params.protocol_name != TCPROS:
            return response
        try:
            relay = await self.registry.lease_relay(
                record.caller_id, params.host, params.port
            )
        except UnknownNode:
            return MethodFault(FAULT_APP, "node %s is gone" % record.caller_id)
        except Exception as exc:  # Exhausted, BindFailed
            log.error("cannot relay %s:%d for %s: %s",
                      params.host, params.port, record.caller_id, exc)
            return MethodFault(FAULT_APP, "cannot allocate relay: %s" % exc)
        rewritten = ProtocolParams(
            TCPROS, self.advertised_host, relay.port + self.host_port_offset
        )
        log.debug("requestTopic for %s: %s:%d -> %s:%d",
                  record.caller_id, params.host, params.port,
                  rewritten.host, rewritten.port)
        return MethodSuccess(
            RosResult(result.code, result.status_message, rewritten.to_value()).to_value()
        )
