"""Desk-scale data-parallel training lab.

Multi-rank simulator exercising the machinery of large distributed
training runs on a single machine: hierarchical collective scheduling,
ring and hybrid all-reduce, read-once data staging, prefetching input
pipelines, layer-wise rate control with gradient lag, and graph-based
FLOP accounting.
"""

import logging
import os

__version__ = "0.1.0"

_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING,
           "error": logging.ERROR}


def _init_logging():
    # DESKDL_LOG is the only environment knob: log level, nothing else.
    level = _LEVELS.get(os.environ.get("DESKDL_LOG", "warning").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s")


_init_logging()
