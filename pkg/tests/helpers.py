"""Shared test utilities: strict value comparison, random value generation,
free-port discovery and connect polling."""

import asyncio
import random
import socket
import string
import time

from rosproxy.xmlrpc_codec import RpcDateTime


def same_value(a, b):
    """Structural equality that keeps bool/int and str subtypes apart."""
    if type(a) is not type(b):
        return False
    if isinstance(a, list):
        return len(a) == len(b) and all(same_value(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return set(a) == set(b) and all(same_value(a[k], b[k]) for k in a)
    return a == b


_TEXT_ALPHABET = (
    string.ascii_letters + string.digits + " _-./<>&'\"\t\n\r" + "äöüß€λ\U0001f600"
)


def random_text(rng, max_len=12):
    return "".join(rng.choice(_TEXT_ALPHABET) for _ in range(rng.randrange(max_len)))


def random_rpc_value(rng, depth=0, max_depth=8):
    """Seeded generator over every value variant, nesting bounded."""
    choices = ["int", "bool", "str", "float", "bytes", "datetime"]
    if depth < max_depth:
        choices += ["list", "dict", "list", "dict"]
    kind = rng.choice(choices)
    if kind == "int":
        return rng.randint(-(2**31), 2**31 - 1)
    if kind == "bool":
        return rng.random() < 0.5
    if kind == "str":
        return random_text(rng)
    if kind == "float":
        return rng.choice(
            [0.0, -0.0, 1.5, -2.25, 1e-9, 3.141592653589793, rng.uniform(-1e12, 1e12)]
        )
    if kind == "bytes":
        return rng.randbytes(rng.randrange(16))
    if kind == "datetime":
        return RpcDateTime("2024-01-0%dT12:0%d:00" % (rng.randrange(1, 9), rng.randrange(9)))
    if kind == "list":
        return [random_rpc_value(rng, depth + 1, max_depth) for _ in range(rng.randrange(4))]
    return {
        random_text(rng, 6): random_rpc_value(rng, depth + 1, max_depth)
        for _ in range(rng.randrange(4))
    }


def free_port(host="127.0.0.1"):
    with socket.socket() as sock:
        sock.bind((host, 0))
        return sock.getsockname()[1]


_range_picker = random.Random()


def free_range(size, host="127.0.0.1"):
    """Find a contiguous block of `size` currently-bindable ports.

    Probing beats a fixed constant: it can't collide with ephemeral
    ports the kernel handed to other fixtures in the same run.
    """
    for _ in range(200):
        base = _range_picker.randrange(20000, 60000 - size)
        socks = []
        try:
            for p in range(base, base + size):
                s = socket.socket()
                s.bind((host, p))
                socks.append(s)
            return base, base + size - 1
        except OSError:
            continue
        finally:
            for s in socks:
                s.close()
    raise RuntimeError("could not find a free port range of %d" % size)


async def poll_refused(host, port, timeout=5.0, interval=0.025):
    """Wait until connecting to host:port is refused; return seconds waited."""
    start = time.monotonic()
    while True:
        try:
            _, writer = await asyncio.open_connection(host, port)
        except OSError:
            return time.monotonic() - start
        writer.close()
        try:
            await writer.wait_closed()
        except OSError:
            pass
        if time.monotonic() - start > timeout:
            raise TimeoutError(f"{host}:{port} still accepting after {timeout}s")
        await asyncio.sleep(interval)


async def poll_until(predicate, timeout=5.0, interval=0.025):
    start = time.monotonic()
    while not predicate():
        if time.monotonic() - start > timeout:
            raise TimeoutError("condition not met after %.1fs" % timeout)
        await asyncio.sleep(interval)
    return time.monotonic() - start


def make_rng(seed):
    return random.Random(seed)
