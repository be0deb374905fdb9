import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from fakes import FakeSocksProxy  # noqa: E402


@pytest.fixture
def fake_proxy():
    proxies = []

    def make(script=(0x00,), routes=None):
        p = FakeSocksProxy(script, routes)
        proxies.append(p)
        return p

    yield make
    for p in proxies:
        p.close()


@pytest.fixture(autouse=True)
def _no_proxy_env(monkeypatch):
    monkeypatch.delenv("ANONPADS_SOCKS_PROXY", raising=False)
