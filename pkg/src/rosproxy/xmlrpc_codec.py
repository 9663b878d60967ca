"""XML-RPC wire codec.

Parses and serializes XML-RPC method calls and responses carried over HTTP,
plus the ROS ``(code, statusMessage, value)`` result convention used by the
Master and Slave APIs.

Values map to native Python types; two wrappers keep the wire type tags
round-trip stable:

    <int>/<i4>          -> int (32-bit signed, range-checked)
    <boolean>           -> bool
    <string> / untyped  -> str
    <double>            -> float (finite only)
    <base64>            -> bytes
    <dateTime.iso8601>  -> RpcDateTime (opaque, carried verbatim)
    <array>             -> list
    <struct>            -> dict

Everything here is pure functions over byte buffers: no shared state, safe
from any number of concurrent handlers.
"""

from __future__ import annotations

import base64
import binascii
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Union
from xml.sax.saxutils import escape as _xml_escape

# Hard ceilings protecting a long-lived proxy from malformed peers.
MAX_DEPTH = 32
MAX_MESSAGE_BYTES = 16 * 1024 * 1024

_INT32_MIN = -(2**31)
_INT32_MAX = 2**31 - 1

# Semi-standard fault codes (XML-RPC fault interoperability set).
FAULT_TRANSPORT = -32300
FAULT_BAD_PARAMS = -32602
FAULT_APP = -32000

_METHOD_NAME_RE = re.compile(r"^\S+$")


class CodecError(Exception):
    """Base class for wire-level decode failures."""


class MalformedXml(CodecError):
    """Input is not a well-formed or well-typed XML-RPC document."""


class DepthExceeded(CodecError):
    """Array/struct nesting is deeper than the configured limit."""


@dataclass(frozen=True)
class RpcDateTime:
    """Opaque ISO-8601 timestamp; the proxy never interprets it."""

    text: str


RpcValue = Union[int, bool, str, float, bytes, RpcDateTime, list, dict]


@dataclass
class MethodCall:
    method_name: str
    params: list


@dataclass
class MethodSuccess:
    value: RpcValue


@dataclass
class MethodFault:
    code: int
    message: str


MethodResponse = Union[MethodSuccess, MethodFault]


@dataclass(frozen=True)
class RosResult:
    """ROS API result triple: code 1 success, 0 failure, -1 error."""

    code: int
    status_message: str
    value: RpcValue

    def to_value(self) -> list:
        return [self.code, self.status_message, self.value]

    @classmethod
    def from_value(cls, value: RpcValue) -> "RosResult":
        if not isinstance(value, list) or len(value) != 3:
            raise ValueError("not a 3-element (code, status, value) array")
        code, status, payload = value
        if isinstance(code, bool) or not isinstance(code, int):
            raise ValueError("result code is not an integer")
        if not isinstance(status, str):
            raise ValueError("status message is not a string")
        return cls(code, status, payload)


# ---------------------------------------------------------------------------
# encoding

def _escape_text(text: str) -> str:
    # CR must go out as a charref: a literal CR would be normalized to LF
    # on the way back in, breaking round-trips.
    return _xml_escape(text).replace("\r", "&#13;")


def _encode_value(value: RpcValue, out: list, depth: int, max_depth: int) -> None:
    if isinstance(value, bool):  # bool before int: bool is an int subclass
        out.append("<value><boolean>%d</boolean></value>" % int(value))
    elif isinstance(value, int):
        if not _INT32_MIN <= value <= _INT32_MAX:
            raise ValueError("integer %d outside 32-bit signed range" % value)
        out.append("<value><int>%d</int></value>" % value)
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError("non-finite double %r cannot be encoded" % value)
        out.append("<value><double>%s</double></value>" % repr(value))
    elif isinstance(value, str):
        out.append("<value><string>%s</string></value>" % _escape_text(value))
    elif isinstance(value, (bytes, bytearray)):
        out.append(
            "<value><base64>%s</base64></value>"
            % base64.b64encode(bytes(value)).decode("ascii")
        )
    elif isinstance(value, RpcDateTime):
        out.append(
            "<value><dateTime.iso8601>%s</dateTime.iso8601></value>"
            % _escape_text(value.text)
        )
    elif isinstance(value, (list, tuple)):
        if depth >= max_depth:
            raise DepthExceeded("nesting deeper than %d" % max_depth)
        out.append("<value><array><data>")
        for item in value:
            _encode_value(item, out, depth + 1, max_depth)
        out.append("</data></array></value>")
    elif isinstance(value, dict):
        if depth >= max_depth:
            raise DepthExceeded("nesting deeper than %d" % max_depth)
        out.append("<value><struct>")
        for name, member in value.items():
            if not isinstance(name, str):
                raise TypeError("struct member name must be str, got %r" % (name,))
            out.append("<member><name>%s</name>" % _escape_text(name))
            _encode_value(member, out, depth + 1, max_depth)
            out.append("</member>")
        out.append("</struct></value>")
    else:
        raise TypeError("cannot encode %r as an XML-RPC value" % (value,))


def encode_call(call: MethodCall, *, max_depth: int = MAX_DEPTH) -> bytes:
    if not _METHOD_NAME_RE.match(call.method_name or ""):
        raise ValueError("invalid method name %r" % (call.method_name,))
    out = [
        '<?xml version="1.0"?>',
        "<methodCall><methodName>%s</methodName>" % _escape_text(call.method_name),
    ]
    if call.params:
        out.append("<params>")
        for param in call.params:
            out.append("<param>")
            _encode_value(param, out, 0, max_depth)
            out.append("</param>")
        out.append("</params>")
    else:
        out.append("<params/>")
    out.append("</methodCall>")
    return "".join(out).encode("utf-8")


def encode_response(resp: MethodResponse, *, max_depth: int = MAX_DEPTH) -> bytes:
    out = ['<?xml version="1.0"?>', "<methodResponse>"]
    if isinstance(resp, MethodSuccess):
        out.append("<params><param>")
        _encode_value(resp.value, out, 0, max_depth)
        out.append("</param></params>")
    elif isinstance(resp, MethodFault):
        out.append("<fault>")
        _encode_value(
            {"faultCode": resp.code, "faultString": resp.message}, out, 0, max_depth
        )
        out.append("</fault>")
    else:
        raise TypeError("not a MethodResponse: %r" % (resp,))
    out.append("</methodResponse>")
    return "".join(out).encode("utf-8")


# ---------------------------------------------------------------------------
# parsing

def _parse_document(body: bytes, max_bytes: int) -> ET.Element:
    if len(body) > max_bytes:
        raise MalformedXml("message of %d bytes exceeds limit %d" % (len(body), max_bytes))
    try:
        return ET.fromstring(body)
    except ET.ParseError as exc:
        raise MalformedXml("not well-formed XML: %s" % exc) from exc
    except (ValueError, UnicodeError) as exc:
        raise MalformedXml(str(exc)) from exc


def _text_of(elem: ET.Element) -> str:
    if len(elem):
        raise MalformedXml("unexpected elements inside <%s>" % elem.tag)
    return elem.text or ""


def _decode_value(elem: ET.Element, depth: int, max_depth: int) -> RpcValue:
    children = list(elem)
    if not children:
        # untyped <value>text</value> is a string
        return elem.text or ""
    if len(children) > 1:
        raise MalformedXml("<value> with more than one type element")
    child = children[0]
    if (elem.text or "").strip() or (child.tail or "").strip():
        raise MalformedXml("mixed text and element content in <value>")
    tag = child.tag

    if tag in ("int", "i4"):
        text = _text_of(child).strip()
        try:
            number = int(text)
        except ValueError as exc:
            raise MalformedXml("bad integer %r" % text) from exc
        if not _INT32_MIN <= number <= _INT32_MAX:
            raise MalformedXml("integer %s outside 32-bit signed range" % text)
        return number
    if tag == "boolean":
        text = _text_of(child).strip()
        if text == "1":
            return True
        if text == "0":
            return False
        raise MalformedXml("bad boolean %r" % text)
    if tag == "string":
        return _text_of(child)
    if tag == "double":
        text = _text_of(child).strip()
        try:
            number = float(text)
        except ValueError as exc:
            raise MalformedXml("bad double %r" % text) from exc
        if not math.isfinite(number):
            raise MalformedXml("non-finite double %r" % text)
        return number
    if tag == "base64":
        text = "".join(_text_of(child).split())
        try:
            return base64.b64decode(text, validate=True)
        except binascii.Error as exc:
            raise MalformedXml("bad base64 payload") from exc
    if tag == "dateTime.iso8601":
        return RpcDateTime(_text_of(child))
    if tag == "array":
        if depth >= max_depth:
            raise DepthExceeded("nesting deeper than %d" % max_depth)
        parts = list(child)
        if len(parts) != 1 or parts[0].tag != "data":
            raise MalformedXml("<array> must contain exactly one <data>")
        items = []
        for item in parts[0]:
            if item.tag != "value":
                raise MalformedXml("non-<value> element inside <data>")
            items.append(_decode_value(item, depth + 1, max_depth))
        return items
    if tag == "struct":
        if depth >= max_depth:
            raise DepthExceeded("nesting deeper than %d" % max_depth)
        record: dict = {}
        for member in child:
            if member.tag != "member":
                raise MalformedXml("non-<member> element inside <struct>")
            name_el = member.find("name")
            value_el = member.find("value")
            if name_el is None or value_el is None or len(list(member)) != 2:
                raise MalformedXml("<member> must contain <name> and <value>")
            record[_text_of(name_el)] = _decode_value(value_el, depth + 1, max_depth)
        return record
    raise MalformedXml("unsupported value type <%s>" % tag)


def _decode_params(params_el: ET.Element, max_depth: int) -> list:
    params = []
    for param in params_el:
        if param.tag != "param":
            raise MalformedXml("non-<param> element inside <params>")
        values = list(param)
        if len(values) != 1 or values[0].tag != "value":
            raise MalformedXml("<param> must contain exactly one <value>")
        params.append(_decode_value(values[0], 0, max_depth))
    return params


def parse_call(
    body: bytes, *, max_depth: int = MAX_DEPTH, max_bytes: int = MAX_MESSAGE_BYTES
) -> MethodCall:
    root = _parse_document(body, max_bytes)
    if root.tag != "methodCall":
        raise MalformedXml("not a methodCall document (root <%s>)" % root.tag)
    name_el = None
    params_el = None
    for child in root:
        if child.tag == "methodName" and name_el is None:
            name_el = child
        elif child.tag == "params" and params_el is None:
            params_el = child
        else:
            raise MalformedXml("unexpected <%s> in methodCall" % child.tag)
    if name_el is None:
        raise MalformedXml("methodCall without methodName")
    method_name = _text_of(name_el)
    if not _METHOD_NAME_RE.match(method_name):
        raise MalformedXml("invalid method name %r" % method_name)
    params = [] if params_el is None else _decode_params(params_el, max_depth)
    return MethodCall(method_name, params)


def parse_response(
    body: bytes, *, max_depth: int = MAX_DEPTH, max_bytes: int = MAX_MESSAGE_BYTES
) -> MethodResponse:
    root = _parse_document(body, max_bytes)
    if root.tag != "methodResponse":
        raise MalformedXml("not a methodResponse document (root <%s>)" % root.tag)
    children = list(root)
    if len(children) != 1:
        raise MalformedXml("methodResponse must contain exactly one <params> or <fault>")
    child = children[0]
    if child.tag == "params":
        params = _decode_params(child, max_depth)
        if len(params) != 1:
            raise MalformedXml("response must carry exactly one value, got %d" % len(params))
        return MethodSuccess(params[0])
    if child.tag == "fault":
        values = list(child)
        if len(values) != 1 or values[0].tag != "value":
            raise MalformedXml("<fault> must contain exactly one <value>")
        payload = _decode_value(values[0], 0, max_depth)
        if not isinstance(payload, dict):
            raise MalformedXml("fault payload is not a struct")
        code = payload.get("faultCode")
        message = payload.get("faultString")
        if isinstance(code, bool) or not isinstance(code, int):
            raise MalformedXml("faultCode missing or not an integer")
        if not isinstance(message, str):
            raise MalformedXml("faultString missing or not a string")
        return MethodFault(code, message)
    raise MalformedXml("unexpected <%s> in methodResponse" % child.tag)
