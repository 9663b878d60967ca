"""Master gateway tests: the five rewritten methods, passthrough
fidelity for everything else, refcount side effects, and fault paths."""

import asyncio

import pytest

from rosproxy.http11 import XmlRpcClient, serve_xmlrpc
from rosproxy.master_gateway import BadSignature, MasterGateway, REWRITE_RULES
from rosproxy.ports import PortAllocator, PortRange
from rosproxy.registry import Registry
from rosproxy.slave_gateway import SlaveGatewayManager
from rosproxy.xmlrpc_codec import (
    FAULT_BAD_PARAMS,
    FAULT_TRANSPORT,
    MethodCall,
    MethodFault,
    MethodSuccess,
)

from helpers import free_port, free_range, make_rng, random_rpc_value

ADV = "127.0.0.1"  # advertised host for these tests


def test_rewrite_rule_table_shape():
    assert set(REWRITE_RULES) == {
        "registerService",
        "registerSubscriber",
        "unregisterSubscriber",
        "registerPublisher",
        "unregisterPublisher",
    }
    assert REWRITE_RULES["registerService"].service_api_index == 2
    assert REWRITE_RULES["registerPublisher"].caller_api_index == 3
    assert REWRITE_RULES["unregisterPublisher"].caller_api_index == 2
    assert REWRITE_RULES["unregisterPublisher"].param_count == 3


async def start_upstream_stub():
    """Records every call; answers in master-API shapes."""
    calls = []

    async def dispatch(path, call, peer):
        calls.append((call.method_name, call.params))
        if call.method_name == "registerSubscriber":
            return MethodSuccess([1, "Subscribed", ["http://pub-elsewhere:5555/"]])
        if call.method_name.startswith("register"):
            return MethodSuccess([1, "Registered", 1])
        if call.method_name.startswith("unregister"):
            return MethodSuccess([1, "Unregistered", 1])
        if call.method_name == "getSystemState":
            return MethodSuccess(
                [1, "state", [[["/chat", ["/talker"]]], [], []]]
            )
        return MethodSuccess([1, "echo", [call.method_name, call.params]])

    port = free_port()
    server = await serve_xmlrpc("127.0.0.1", port, dispatch)
    return server, "http://127.0.0.1:%d/" % port, calls


def build_gateway(upstream_uri, range_size=8, main_port=None, offset=0):
    low, high = free_range(range_size)
    allocator = PortAllocator(PortRange(low, high))
    parts = {}

    async def factory(record):
        return await parts["manager"].start_gateway(record)

    registry = Registry(allocator, factory, bind_host="127.0.0.1", rpc_timeout=2.0)
    manager = SlaveGatewayManager(
        registry, ADV, host_port_offset=offset, bind_host="127.0.0.1", rpc_timeout=2.0
    )
    parts["manager"] = manager
    gateway = MasterGateway(
        registry,
        manager,
        upstream_uri,
        main_port=main_port or free_port(),
        bind_host="127.0.0.1",
        rpc_timeout=2.0,
    )
    return gateway, registry, manager, allocator


async def test_register_publisher_rewrites_caller_api():
    upstream, uri, calls = await start_upstream_stub()
    gateway, registry, manager, _ = build_gateway(uri)
    try:
        call = MethodCall(
            "registerPublisher",
            ["/talker", "/chat", "std_msgs/String", "http://10.0.2.3:43231/"],
        )
        response = await gateway.handle_master_call(call, ("10.0.2.3", 1))
        assert response == MethodSuccess([1, "Registered", 1])
        record = registry.get("/talker")
        assert calls == [
            (
                "registerPublisher",
                ["/talker", "/chat", "std_msgs/String",
                 "http://%s:%d/" % (ADV, record.gateway_port)],
            )
        ]
        assert record.publications == {"/chat"}
        assert record.real_slave_uri == "http://10.0.2.3:43231/"
    finally:
        upstream.close()
        await upstream.wait_closed()
        await registry.purge_all()


async def test_register_subscriber_response_passes_back_unmodified():
    upstream, uri, calls = await start_upstream_stub()
    gateway, registry, _, _ = build_gateway(uri)
    try:
        response = await gateway.handle_master_call(
            MethodCall(
                "registerSubscriber",
                ["/listener", "/chat", "std_msgs/String", "http://10.0.2.4:43211/"],
            ),
            ("10.0.2.4", 1),
        )
        # publisher list untouched: subscribers dial publishers outbound
        assert response == MethodSuccess([1, "Subscribed", ["http://pub-elsewhere:5555/"]])
        assert registry.get("/listener").subscriptions == {"/chat"}
    finally:
        upstream.close()
        await upstream.wait_closed()
        await registry.purge_all()


async def test_unregister_uses_three_param_signature_and_drops_refcount():
    upstream, uri, calls = await start_upstream_stub()
    gateway, registry, _, _ = build_gateway(uri)
    registry.grace_period = 60.0  # keep the timer from firing mid-test
    try:
        await gateway.handle_master_call(
            MethodCall(
                "registerSubscriber",
                ["/listener", "/chat", "std_msgs/String", "http://10.0.2.4:43211/"],
            ),
            None,
        )
        record = registry.get("/listener")
        await gateway.handle_master_call(
            MethodCall(
                "unregisterSubscriber",
                ["/listener", "/chat", "http://10.0.2.4:43211/"],
            ),
            None,
        )
        assert record.refcount() == 0
        assert "/listener" in registry.nodes  # grace, not instant purge
        assert calls[1] == (
            "unregisterSubscriber",
            ["/listener", "/chat", "http://%s:%d/" % (ADV, record.gateway_port)],
        )
    finally:
        upstream.close()
        await upstream.wait_closed()
        await registry.purge_all()


async def test_register_service_rewrites_both_apis_and_relays():
    async def service_socket(reader, writer):
        writer.write(b"service-bytes")
        await writer.drain()
        writer.close()

    srv_port = free_port()
    srv = await asyncio.start_server(service_socket, "127.0.0.1", srv_port)
    upstream, uri, calls = await start_upstream_stub()
    gateway, registry, _, allocator = build_gateway(uri)
    try:
        call = MethodCall(
            "registerService",
            ["/adder", "/add_two_ints", "rosrpc://127.0.0.1:%d" % srv_port,
             "http://10.0.2.5:43299/"],
        )
        response = await gateway.handle_master_call(call, None)
        assert response == MethodSuccess([1, "Registered", 1])
        record = registry.get("/adder")
        relay = record.tcpros_relays[("127.0.0.1", srv_port)]
        sent_method, sent_params = calls[0]
        assert sent_params == [
            "/adder",
            "/add_two_ints",
            "rosrpc://%s:%d" % (ADV, relay.port),
            "http://%s:%d/" % (ADV, record.gateway_port),
        ]
        assert record.services == {"/add_two_ints"}

        reader, writer = await asyncio.open_connection(ADV, relay.port)
        assert await asyncio.wait_for(reader.read(), 2.0) == b"service-bytes"
        writer.close()
        await writer.wait_closed()

        # same endpoint re-registered -> relay reused, no extra lease
        before = len(allocator.live_leases())
        await gateway.handle_master_call(call, None)
        assert len(allocator.live_leases()) == before
        assert len(record.tcpros_relays) == 1
    finally:
        srv.close()
        await srv.wait_closed()
        upstream.close()
        await upstream.wait_closed()
        await registry.purge_all()


async def test_bad_signatures_become_param_faults():
    upstream, uri, calls = await start_upstream_stub()
    gateway, registry, _, _ = build_gateway(uri)
    try:
        short = await gateway.handle_master_call(
            MethodCall("registerPublisher", ["/n", "/chat"]), None
        )
        assert isinstance(short, MethodFault) and short.code == FAULT_BAD_PARAMS

        bad_service = await gateway.handle_master_call(
            MethodCall(
                "registerService",
                ["/n", "/srv", "10.0.2.3:51234", "http://10.0.2.3:1/"],
            ),
            None,
        )
        assert isinstance(bad_service, MethodFault)
        assert bad_service.code == FAULT_BAD_PARAMS

        not_http = await gateway.handle_master_call(
            MethodCall(
                "registerPublisher", ["/n", "/chat", "std_msgs/String", "nota uri"]
            ),
            None,
        )
        assert isinstance(not_http, MethodFault)
        assert not_http.code == FAULT_BAD_PARAMS

        assert calls == []  # nothing malformed reached upstream
    finally:
        upstream.close()
        await upstream.wait_closed()
        await registry.purge_all()


async def test_rewrite_helpers_raise_bad_signature_directly():
    upstream, uri, _ = await start_upstream_stub()
    gateway, registry, _, _ = build_gateway(uri)
    try:
        record = await registry.ensure_node("/n", "http://10.0.2.3:1/")
        with pytest.raises(BadSignature):
            gateway.rewrite_caller_api(MethodCall("getPid", ["/n"]), record)
        with pytest.raises(BadSignature):
            gateway.rewrite_caller_api(
                MethodCall("registerPublisher", ["/n", "/chat"]), record
            )
        with pytest.raises(BadSignature):
            await gateway.rewrite_service_api(
                MethodCall(
                    "registerService", ["/n", "/s", "http://wrong-scheme:1/", "http://h:1/"]
                ),
                record,
            )
    finally:
        upstream.close()
        await upstream.wait_closed()
        await registry.purge_all()


async def test_non_intercepted_methods_pass_through_semantically():
    upstream, uri, calls = await start_upstream_stub()
    gateway, registry, _, _ = build_gateway(uri)
    rng = make_rng(0xA571)
    try:
        state = await gateway.handle_master_call(
            MethodCall("getSystemState", ["/probe"]), None
        )
        assert state == MethodSuccess([1, "state", [[["/chat", ["/talker"]]], [], []]])

        for n in range(25):
            method = "lookupThing%d" % n
            params = [random_rpc_value(rng, 0, max_depth=3) for _ in range(rng.randrange(4))]
            response = await gateway.handle_master_call(MethodCall(method, params), None)
            assert response == MethodSuccess([1, "echo", [method, params]])
            assert calls[-1] == (method, params)
        assert registry.nodes == {}  # passthrough never creates records
    finally:
        upstream.close()
        await upstream.wait_closed()


async def test_unreachable_upstream_is_transport_fault():
    dead_uri = "http://127.0.0.1:%d/" % free_port()
    gateway, registry, _, _ = build_gateway(dead_uri)
    try:
        response = await gateway.handle_master_call(
            MethodCall(
                "registerPublisher",
                ["/talker", "/chat", "std_msgs/String", "http://10.0.2.3:1/"],
            ),
            None,
        )
        assert isinstance(response, MethodFault)
        assert response.code == FAULT_TRANSPORT
        # intent was still recorded; liveness pinging owns the cleanup
        assert registry.get("/talker").publications == {"/chat"}
    finally:
        await registry.purge_all()


async def test_reregistration_is_idempotent_incl_advertised_uri_echo():
    upstream, uri, calls = await start_upstream_stub()
    gateway, registry, manager, allocator = build_gateway(uri)
    try:
        call = MethodCall(
            "registerPublisher",
            ["/talker", "/chat", "std_msgs/String", "http://10.0.2.3:43231/"],
        )
        await gateway.handle_master_call(call, None)
        record = registry.get("/talker")
        port_before = record.gateway_port

        await gateway.handle_master_call(call, None)  # plain re-registration
        assert registry.get("/talker") is record

        # re-registration whose caller_api is the advertised URI itself
        echoed = MethodCall(
            "registerPublisher",
            ["/talker", "/chat", "std_msgs/String", manager.advertised_uri(record)],
        )
        await gateway.handle_master_call(echoed, None)
        again = registry.get("/talker")
        assert again is record
        assert again.gateway_port == port_before
        slave_leases = [
            l for l in allocator.live_leases() if l.owner == "/talker" and l.purpose == "slave_api_gateway"
        ]
        assert len(slave_leases) == 1
        # every upstream copy carried the same advertised caller_api
        sent_apis = {params[3] for _, params in calls}
        assert sent_apis == {manager.advertised_uri(record)}
    finally:
        upstream.close()
        await upstream.wait_closed()
        await registry.purge_all()


async def test_http_ingress_and_node_alias_routing():
    upstream, uri, _ = await start_upstream_stub()
    main_port = free_port()
    gateway, registry, manager, _ = build_gateway(uri, main_port=main_port)

    async def node_dispatch(path, call, peer):
        return MethodSuccess([1, "pid", 31337])

    node_port = free_port()
    node = await serve_xmlrpc("127.0.0.1", node_port, node_dispatch)
    await gateway.start()
    try:
        master_client = XmlRpcClient("http://127.0.0.1:%d/" % main_port)
        await master_client.call_ros(
            "registerPublisher",
            ["/talker", "/chat", "std_msgs/String", "http://127.0.0.1:%d/" % node_port],
        )
        alias_client = XmlRpcClient("http://127.0.0.1:%d/node/%%2Ftalker" % main_port)
        result = await alias_client.call_ros("getPid", ["/probe"])
        assert result.value == 31337

        ghost = XmlRpcClient("http://127.0.0.1:%d/node/%%2Fghost" % main_port)
        response = await ghost.call("getPid", ["/probe"])
        assert isinstance(response, MethodFault)
    finally:
        await gateway.stop()
        node.close()
        await node.wait_closed()
        upstream.close()
        await upstream.wait_closed()
        await registry.purge_all()
