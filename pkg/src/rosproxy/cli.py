"""Command line front door.

`rosproxy [flags]` serves the proxy; `rosproxy harness ...` runs the
self-contained simulation scenarios used for end-to-end verification.
"""

from __future__ import annotations

import asyncio
import os
import sys
from typing import List, Optional

from .app import EXIT_CONFIG, run, setup_logging
from .config import ConfigError, load_config


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    if argv and argv[0] == "harness":
        from .harness.runner import main as harness_main

        return harness_main(argv[1:])
    try:
        config = load_config(os.environ, argv)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    setup_logging(config.log_level)
    return asyncio.run(run(config))


if __name__ == "__main__":
    sys.exit(main())
