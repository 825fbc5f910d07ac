from __future__ import annotations

import importlib.metadata

import fraclab as m


def test_version():
    assert importlib.metadata.version("fraclab") == m.__version__
