import dataclasses
import math
import threading
import time

import numpy as np
import pytest

from anonpads.transport.base import ConnectFailed
from anonpads.transport.emu import (TOR_RTT_ROWS, CircuitDown, EmuConfig, EmuOverlay,
                                    EmuTransport, LatencyParams, emu_advance, emu_sample_delay,
                                    emu_sample_rtt, lognormal_moments, moment_match, new_circuit)
from anonpads.transport.emu_tcp import EmuTcpTransport
from anonpads.wire import Ack, Endpoint, Hello, StepEnd

DEG100 = EmuConfig(mean_ms=100.0, std_ms=0.0)


def test_moment_match_reference_values():
    mu, sigma = moment_match(326.42, 278.52)
    assert sigma ** 2 == pytest.approx(math.log(1.7280), abs=1e-4)
    assert sigma ** 2 == pytest.approx(0.5470, abs=1e-4)
    # ln(326.42) - 0.54700 / 2, evaluated by hand
    assert mu == pytest.approx(5.51468, abs=1e-4)


@pytest.mark.parametrize("row", sorted(TOR_RTT_ROWS))
def test_moment_match_identity(row):
    mean, std = TOR_RTT_ROWS[row]
    m, s = lognormal_moments(*moment_match(mean, std))
    assert m == pytest.approx(mean, rel=1e-9)
    assert s == pytest.approx(std, rel=1e-9)


def test_zero_std_is_deterministic():
    mu, sigma = moment_match(250.0, 0.0)
    assert sigma == 0.0 and mu == pytest.approx(math.log(250.0))


def test_moment_match_domain():
    with pytest.raises(ValueError):
        moment_match(0.0, 1.0)
    with pytest.raises(ValueError):
        moment_match(10.0, -1.0)


def test_monte_carlo_reproduces_moments():
    mu, sigma = moment_match(326.42, 278.52)
    x = np.random.default_rng(0).lognormal(mu, sigma, 1_000_000)
    assert x.mean() == pytest.approx(326.42, rel=0.01)
    assert x.std(ddof=1) == pytest.approx(278.52, rel=0.01)


def _circuit(cfg, seed=0, now=0.0):
    rng = np.random.default_rng(seed)
    return new_circuit(cfg.params, now, rng, cfg), rng


def test_degenerate_delay_is_half_rtt():
    c, rng = _circuit(DEG100)
    assert [emu_sample_delay(c, rng) for _ in range(20)] == pytest.approx([50.0] * 20)
    assert emu_sample_rtt(c, rng) == pytest.approx(100.0)


def test_frankfurt_dublin_one_way_mean():
    cfg = EmuConfig(*TOR_RTT_ROWS["frankfurt-dublin"])
    c, rng = _circuit(cfg, seed=3)
    d = [emu_sample_delay(c, rng) for _ in range(100_000)]
    assert np.mean(d) == pytest.approx(540.74 / 2, rel=0.02)
    assert min(d) > 0


def test_delays_reproducible_under_seed():
    c1, r1 = _circuit(EmuConfig(), seed=9)
    c2, r2 = _circuit(EmuConfig(), seed=9)
    assert [emu_sample_delay(c1, r1) for _ in range(50)] == [emu_sample_delay(c2, r2) for _ in range(50)]


def test_base_offset_adds_to_delay():
    cfg = dataclasses.replace(DEG100, base_jitter_ms=40.0)
    c, rng = _circuit(cfg, seed=1)
    assert 0 <= c.base_offset_ms <= 40.0
    assert emu_sample_delay(c, rng) == pytest.approx(50.0 + c.base_offset_ms)


def test_dead_circuit_refuses_samples():
    c, rng = _circuit(EmuConfig())
    with pytest.raises(CircuitDown):
        emu_sample_delay(dataclasses.replace(c, alive=False), rng)


def test_lifetime_within_bounds():
    cfg = EmuConfig()
    rng = np.random.default_rng(5)
    for _ in range(1000):
        c = new_circuit(cfg.params, 0.0, rng, cfg)
        assert cfg.min_lifetime_ms <= c.lifetime_ms <= cfg.max_lifetime_ms


def test_advance_within_lifetime_is_noop():
    c, rng = _circuit(EmuConfig())
    assert emu_advance(c, c.lifetime_ms - 1, rng, EmuConfig()) is c


def test_advance_past_lifetime_rebuilds_without_failure():
    cfg = dataclasses.replace(EmuConfig(), p_reset=0.0)
    c, rng = _circuit(cfg)
    now = c.lifetime_ms + 1
    r = emu_advance(c, now, rng, cfg)
    assert r.generation == 1 and r.established_at == now and not r.reset and r.alive


def test_reset_fraction_over_many_rebuilds():
    cfg = EmuConfig()
    c, rng = _circuit(cfg, seed=11)
    failures = 0
    for _ in range(10_000):
        c = emu_advance(c, c.established_at + c.lifetime_ms + 1, rng, cfg)
        failures += c.reset
    assert failures / 10_000 == pytest.approx(0.05, abs=0.01)


def test_reset_flag_clears_on_next_use():
    cfg = dataclasses.replace(EmuConfig(), p_reset=1.0)
    c, rng = _circuit(cfg)
    c = emu_advance(c, c.lifetime_ms + 1, rng, cfg)
    assert c.reset
    assert not emu_advance(c, c.established_at + 1, rng, cfg).reset


# -- overlay channels ------------------------------------------------------------

def _pair(overlay):
    server = EmuTransport(overlay, "srv")
    lst = server.listen()
    client = EmuTransport(overlay, "cli").connect(lst.endpoint)
    return client, lst.accept(timeout=2), lst


def test_overlay_delivers_in_order_both_ways():
    ov = EmuOverlay(EmuConfig(), seed=1)
    try:
        a, b, _ = _pair(ov)
        for i in range(200):
            a.send(StepEnd(i, 0, i))
        b.send(Hello(7))
        assert [b.recv(timeout=5) for _ in range(200)] == [StepEnd(i, 0, i) for i in range(200)]
        assert a.recv(timeout=5) == Hello(7)
    finally:
        ov.stop()


def test_overlay_survives_frequent_circuit_failures():
    # circuits live 1-3 ms and one rebuild in ten is a failure, so the link
    # drops in-flight frames many times over the transfer
    cfg = EmuConfig(min_lifetime_ms=1.0, max_lifetime_ms=3.0, p_reset=0.1)
    ov = EmuOverlay(cfg, seed=2, rel_kwargs={"initial_rto_ms": 50.0, "min_rto_ms": 5.0})
    try:
        a, b, _ = _pair(ov)
        for i in range(80):
            a.send(Ack(i))
        got = [b.recv(timeout=30) for _ in range(80)]
        assert got == [Ack(i) for i in range(80)]
        assert a.link_stats()["failures"] > 0
    finally:
        ov.stop()


def test_unknown_hidden_service_refused():
    ov = EmuOverlay(EmuConfig(), seed=1)
    try:
        with pytest.raises(ConnectFailed):
            EmuTransport(ov, "x").connect(Endpoint("emu", "anon:nobody", 9001))
    finally:
        ov.stop()


def test_sleep_mode_delays_frames():
    cfg = EmuConfig(mean_ms=200.0, std_ms=0.0, mode="sleep", time_scale=0.5)
    ov = EmuOverlay(cfg, seed=1)
    try:
        a, b, _ = _pair(ov)
        t0 = time.monotonic()
        a.send(Hello(1))
        b.recv(timeout=5)
        elapsed = time.monotonic() - t0
        assert 0.045 <= elapsed < 0.5      # 100 ms one-way x 0.5
    finally:
        ov.stop()


def test_probe_rtt_degenerate():
    ov = EmuOverlay(DEG100, seed=1)
    try:
        srv = EmuTransport(ov, "srv")
        ep = srv.listen().endpoint
        probe = EmuTransport(ov, "p")
        assert [probe.probe_rtt(ep, t * 1000.0) for t in range(5)] == pytest.approx([100.0] * 5)
    finally:
        ov.stop()


def test_emu_over_tcp_delays_and_orders():
    cfg = EmuConfig(mean_ms=100.0, std_ms=0.0, time_scale=0.5)
    srv, cli = EmuTcpTransport(cfg, seed=1, name="s"), EmuTcpTransport(cfg, seed=1, name="c")
    try:
        lst = srv.listen()
        assert lst.endpoint.scheme == "emu"
        a = cli.connect(lst.endpoint)
        b = lst.accept(timeout=2)
        t0 = time.monotonic()
        for i in range(20):
            a.send(Ack(i))
        got = [b.recv(timeout=5) for _ in range(20)]
        assert got == [Ack(i) for i in range(20)]
        assert time.monotonic() - t0 >= 0.02
        a.close()
        b.close()
        lst.close()
    finally:
        srv.stop()
        cli.stop()
