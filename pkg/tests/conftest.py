import asyncio
import inspect

# Filled in by the acceptance tests; printed once at the end of the run
# so every criterion gets its own visible verdict line.
ACCEPTANCE_LINES = []


def pytest_pyfunc_call(pyfuncitem):
    """Run ``async def`` tests on a fresh event loop, no plugin needed."""
    test_fn = pyfuncitem.obj
    if inspect.iscoroutinefunction(test_fn):
        kwargs = {
            name: pyfuncitem.funcargs[name]
            for name in pyfuncitem._fixtureinfo.argnames
        }
        asyncio.run(test_fn(**kwargs))
        return True
    return None


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
