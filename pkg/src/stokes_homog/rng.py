"""Reproducible random streams.

Every stream is a Philox (counter-based) generator keyed by one 64-bit run
seed plus a tuple of integers naming the sub-stream, so draws do not depend
on the order in which streams are created or consumed.
"""

import zlib

import numpy as np


def _label_key(label):
    if isinstance(label, str):
        return zlib.crc32(label.encode("utf-8"))
    return int(label)


def stream(seed, *labels):
    """Return a Generator for the sub-stream ``labels`` of run ``seed``."""
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    ss = np.random.SeedSequence(seed, spawn_key=tuple(_label_key(lbl) for lbl in labels))
    return np.random.Generator(np.random.Philox(ss))
