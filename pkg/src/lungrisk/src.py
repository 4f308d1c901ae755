"""
Import bridge for installed wheels.

The toolkit's modules import each other as ``src.<package>``. From a
source checkout ``src`` is a real package; after ``pip install`` only the
top-level packages exist, so this module registers a namespace-style
``src`` module whose path is the install directory.
"""
import os
import sys
import types

if "src" not in sys.modules:
    try:
        import src  # noqa: F401
    except ImportError:
        bridge = types.ModuleType("src")
        bridge.__path__ = [os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))]
        sys.modules["src"] = bridge
