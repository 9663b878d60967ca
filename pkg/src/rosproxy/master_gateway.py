"""Master-API ingress: the address internal nodes use as their master.

Five registration methods carry the caller's XML-RPC endpoint (and, for
services, a rosrpc endpoint) — addresses that are meaningless outside
the internal segment. Those get intercepted: the proxy ensures per-node
resources exist, swaps the endpoints for advertised ones, keeps the
registration refcounts, and only then forwards upstream. Everything
else is forwarded untouched, both ways: subscriber lists, parameter
traffic, lookups. Nodes connect *outward* to addresses in responses on
their own, so responses never need rewriting.

The same listener also serves /node/<percent-encoded caller_id> as a
diagnostic alias onto each node's gateway, which is handy when only the
main port is reachable from where you are debugging.
"""

from __future__ import annotations

import asyncio
import logging
from dataclasses import dataclass
from typing import Optional
from urllib.parse import unquote

from .http11 import (
    Dialer,
    RpcTransportError,
    XmlRpcClient,
    serve_xmlrpc,
    split_http_uri,
    split_rosrpc_uri,
)
from .registry import (
    KIND_PUB,
    KIND_SERVICE,
    KIND_SUB,
    NodeRecord,
    Registry,
    UnknownNode,
)
from .slave_gateway import SlaveGatewayManager
from .xmlrpc_codec import (
    FAULT_APP,
    FAULT_BAD_PARAMS,
    FAULT_TRANSPORT,
    MethodCall,
    MethodFault,
    MethodResponse,
)

log = logging.getLogger(__name__)


class BadSignature(Exception):
    """Call params do not match the master-API signature for the method."""


@dataclass(frozen=True)
class RewriteRule:
    method: str
    param_count: int
    caller_api_index: int
    kind: str                 # registry refcount bucket
    registers: bool           # False → this is the unregister direction
    name_index: int = 1       # topic/service name position
    service_api_index: Optional[int] = None


REWRITE_RULES = {
    rule.method: rule
    for rule in (
        RewriteRule("registerService", 4, 3, KIND_SERVICE, True, service_api_index=2),
        RewriteRule("registerSubscriber", 4, 3, KIND_SUB, True),
        RewriteRule("unregisterSubscriber", 3, 2, KIND_SUB, False),
        RewriteRule("registerPublisher", 4, 3, KIND_PUB, True),
        RewriteRule("unregisterPublisher", 3, 2, KIND_PUB, False),
    )
}


def _check_signature(call: MethodCall, rule: RewriteRule) -> None:
    if len(call.params) != rule.param_count:
        raise BadSignature(
            "%s takes %d params, got %d"
            % (call.method_name, rule.param_count, len(call.params))
        )
    for index in (0, rule.name_index, rule.caller_api_index):
        if not isinstance(call.params[index], str):
            raise BadSignature(
                "%s param %d must be a string" % (call.method_name, index)
            )
    try:
        split_http_uri(call.params[rule.caller_api_index])
    except ValueError as exc:
        raise BadSignature("caller_api: %s" % exc)
    if rule.service_api_index is not None:
        if not isinstance(call.params[rule.service_api_index], str):
            raise BadSignature("service_api must be a string")


class MasterGateway:
    def __init__(
        self,
        registry: Registry,
        slave_gateways: SlaveGatewayManager,
        upstream_master_uri: str,
        *,
        main_port: int = 11311,
        bind_host: str = "",
        rpc_timeout: float = 5.0,
        dial: Optional[Dialer] = None,
    ):
        self.registry = registry
        self.slave_gateways = slave_gateways
        self.upstream_master_uri = upstream_master_uri
        self.main_port = main_port
        self.bind_host = bind_host
        self.rpc_timeout = rpc_timeout
        self.dial = dial
        self._server: Optional[asyncio.AbstractServer] = None

    # -- lifecycle ---------------------------------------------------

    async def start(self) -> None:
        self._server = await serve_xmlrpc(self.bind_host, self.main_port, self._dispatch)
        log.info("master gateway listening on %s:%d, upstream %s",
                 self.bind_host or "*", self.main_port, self.upstream_master_uri)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def _dispatch(self, path: str, call: MethodCall, peer) -> MethodResponse:
        if path.startswith("/node/"):
            caller_id = unquote(path[len("/node/"):])
            try:
                record = self.registry.get(caller_id)
            except UnknownNode:
                return MethodFault(FAULT_APP, "no proxied node %r" % caller_id)
            return await self.slave_gateways.handle_slave_call(record, call)
        return await self.handle_master_call(call, peer)

    # -- master-API handling -----------------------------------------

    async def handle_master_call(self, call: MethodCall, peer) -> MethodResponse:
        rule = REWRITE_RULES.get(call.method_name)
        if rule is None:
            return await self._forward(call)

        try:
            _check_signature(call, rule)
        except BadSignature as exc:
            return MethodFault(FAULT_BAD_PARAMS, str(exc))

        caller_id = call.params[0]
        caller_api = call.params[rule.caller_api_index]
        try:
            record = await self._node_for(caller_id, caller_api)
            rewritten = self.rewrite_caller_api(call, record)
            if rule.service_api_index is not None:
                rewritten = await self.rewrite_service_api(rewritten, record)
        except BadSignature as exc:
            return MethodFault(FAULT_BAD_PARAMS, str(exc))
        except UnknownNode as exc:
            return MethodFault(FAULT_APP, "node vanished during handling: %s" % exc)
        except Exception as exc:  # Exhausted, BindFailed
            log.error("cannot provision %s for %s: %s", call.method_name, caller_id, exc)
            return MethodFault(FAULT_APP, "cannot provision node resources: %s" % exc)

        name = call.params[rule.name_index]
        if rule.registers:
            self.registry.add_registration(caller_id, rule.kind, name)
        else:
            remaining = self.registry.remove_registration(caller_id, rule.kind, name)
            log.debug("%s %s %r: refcount now %d", caller_id, call.method_name, name, remaining)

        return await self._forward(rewritten)

    async def _node_for(self, caller_id: str, caller_api: str) -> NodeRecord:
        """ensure_node, except a caller_api that is already the node's
        advertised URI (state replayed back through the proxy) must not
        read as a restart."""
        existing = self.registry.nodes.get(caller_id)
        if (
            existing is not None
            and not existing.purged
            and caller_api == self.slave_gateways.advertised_uri(existing)
        ):
            return existing
        return await self.registry.ensure_node(caller_id, caller_api)

    def rewrite_caller_api(self, call: MethodCall, node: NodeRecord) -> MethodCall:
        rule = REWRITE_RULES.get(call.method_name)
        if rule is None:
            raise BadSignature("%s is not a rewritten method" % call.method_name)
        _check_signature(call, rule)
        params = list(call.params)
        params[rule.caller_api_index] = self.slave_gateways.advertised_uri(node)
        return MethodCall(call.method_name, params)

    async def rewrite_service_api(self, call: MethodCall, node: NodeRecord) -> MethodCall:
        rule = REWRITE_RULES.get(call.method_name)
        if rule is None or rule.service_api_index is None:
            raise BadSignature("%s carries no service_api" % call.method_name)
        _check_signature(call, rule)
        raw = call.params[rule.service_api_index]
        try:
            host, port = split_rosrpc_uri(raw)
        except ValueError as exc:
            raise BadSignature(str(exc))
        relay = await self.registry.lease_relay(node.caller_id, host, port)
        params = list(call.params)
        params[rule.service_api_index] = self.slave_gateways.advertised_rosrpc(relay.port)
        return MethodCall(call.method_name, params)

    async def _forward(self, call: MethodCall) -> MethodResponse:
        client = XmlRpcClient(
            self.upstream_master_uri, timeout=self.rpc_timeout, dial=self.dial
        )
        try:
            return await client.call(call.method_name, call.params)
        except RpcTransportError as exc:
            log.warning("upstream %s unreachable for %s: %s",
                        self.upstream_master_uri, call.method_name, exc)
            return MethodFault(
                FAULT_TRANSPORT, "upstream master unreachable: %s" % exc
            )
