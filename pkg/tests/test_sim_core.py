"""Engine-level tests: ordering, cancellation, determinism, link faults."""

import math

import pytest

from rksim.sim import InvariantViolation, LinkModel, RngStream, Simulator


class Recorder:
    def __init__(self):
        self.seen = []

    def __call__(self, payload):
        self.seen.append(payload)


def test_events_fire_in_time_then_sequence_order():
    sim = Simulator(seed=1)
    rec = Recorder()
    sim.register("sink", rec)
    sim.schedule(10, "sink", "b")
    sim.schedule(5, "sink", "a")
    sim.schedule(10, "sink", "c")
    sim.run_until(100)
    assert rec.seen == ["a", "b", "c"]


def test_same_fire_time_breaks_ties_by_insertion_sequence():
    sim = Simulator(seed=1)
    rec = Recorder()
    sim.register("sink", rec)
    for name in ["first", "second", "third"]:
        sim.schedule(7, "sink", name)
    sim.run_until(7)
    assert rec.seen == ["first", "second", "third"]


def test_run_until_boundary_only_fires_due_events():
    sim = Simulator(seed=1)
    rec = Recorder()
    sim.register("sink", rec)
    sim.schedule(10, "sink", "early")
    sim.schedule(20, "sink", "late")
    sim.run_until(15)
    assert rec.seen == ["early"]
    assert sim.now == 15
    sim.run_until(25)
    assert rec.seen == ["early", "late"]


def test_empty_queue_run_until_advances_clock():
    sim = Simulator(seed=1)
    assert sim.run_until(1000) == 1000
    assert sim.now == 1000


def test_scheduling_in_the_past_is_rejected():
    sim = Simulator(seed=1)
    sim.register("sink", Recorder())
    sim.run_until(50)
    with pytest.raises(ValueError):
        sim.schedule(-1, "sink", "x")
    with pytest.raises(ValueError):
        sim.schedule_at(49, "sink", "x")


def test_cancelled_event_never_fires_and_later_cancel_is_noop():
    sim = Simulator(seed=1)
    rec = Recorder()
    sim.register("sink", rec)
    keep = sim.schedule(10, "sink", "keep")
    drop = sim.schedule(10, "sink", "drop")
    sim.cancel(drop)
    sim.run_until(20)
    assert rec.seen == ["keep"]
    sim.cancel(keep)
    sim.cancel(drop)
    assert rec.seen == ["keep"]


def test_events_to_unregistered_target_are_counted_not_raised():
    sim = Simulator(seed=1)
    sim.schedule(5, "ghost", "x")
    sim.run_until(10)
    assert sim.events_dropped_dead_target == 1


def test_clock_monotonicity_over_random_schedule():
    sim = Simulator(seed=7)
    fired = []
    sim.register("sink", lambda p: fired.append(sim.now))
    rng = sim.rng("driver")
    for _ in range(500):
        sim.schedule_at(rng.randint(0, 10_000), "sink", None)
    sim.run_until(10_000)
    assert fired == sorted(fired)
    assert len(fired) == 500


def test_handler_can_schedule_followup_events():
    sim = Simulator(seed=1)
    hops = []

    def bounce(payload):
        hops.append((sim.now, payload))
        if payload < 3:
            sim.schedule(10, "bouncer", payload + 1)

    sim.register("bouncer", bounce)
    sim.schedule(0, "bouncer", 0)
    sim.run_until(1000)
    assert hops == [(0, 0), (10, 1), (20, 2), (30, 3)]


class TestRngStreams:
    def test_same_seed_and_stream_reproduce_draws(self):
        a = RngStream(42, "latency")
        b = RngStream(42, "latency")
        assert [a.random() for _ in range(20)] == [b.random() for _ in range(20)]

    def test_distinct_streams_are_independent(self):
        a = RngStream(42, "latency")
        b = RngStream(42, "election")
        assert [a.random() for _ in range(8)] != [b.random() for _ in range(8)]

    def test_simulator_caches_streams_by_id(self):
        sim = Simulator(seed=9)
        first = sim.rng("x")
        first.random()
        assert sim.rng("x") is first

    def test_draw_sequence_is_frozen(self):
        # Pinned values guard against accidental reseeding or stream drift.
        rng = RngStream(1234, "pinned")
        draws = [round(rng.random(), 6) for _ in range(3)]
        assert draws == [0.089946, 0.262486, 0.161155]


class TestLinkModel:
    def test_zero_drop_constant_latency(self):
        sim = Simulator(seed=3)
        rec = Recorder()
        sim.register("sink", rec)
        link = LinkModel(base_ms=4)
        latency = sim.deliver("sink", "msg", link, sim.rng("net"))
        assert latency == 4
        sim.run_until(4)
        assert rec.seen == ["msg"]

    def test_full_drop_never_schedules(self):
        sim = Simulator(seed=3)
        sim.register("sink", Recorder())
        link = LinkModel(base_ms=4, drop_probability=1.0)
        assert sim.deliver("sink", "msg", link, sim.rng("net")) is None
        assert sim.pending_count() == 0
        assert sim.messages_dropped == 1

    def test_drop_fraction_matches_probability(self):
        sim = Simulator(seed=11)
        sim.register("sink", Recorder())
        link = LinkModel(base_ms=1, drop_probability=0.1)
        rng = sim.rng("net")
        n = 10_000
        dropped = sum(1 for _ in range(n) if sim.deliver("sink", "m", link, rng) is None)
        # binomial: sd ~ 0.003, so a 0.01 window is a > 3 sigma bound
        assert math.isclose(dropped / n, 0.1, abs_tol=0.01)

    def test_jitter_adds_to_base(self):
        from rksim.distributions import Constant

        link = LinkModel(base_ms=2, jitter=Constant(5))
        sim = Simulator(seed=1)
        assert link.sample_latency_ms(sim.rng("net")) == 7

    def test_invalid_parameters_rejected(self):
        with pytest.raises(ValueError):
            LinkModel(base_ms=-1)
        with pytest.raises(ValueError):
            LinkModel(base_ms=1, drop_probability=1.5)


def _drive(seed):
    """A little scenario whose event history depends on rng draws."""
    sim = Simulator(seed=seed)
    log = []
    link = LinkModel(base_ms=1, drop_probability=0.3)
    rng = sim.rng("net")

    def node(payload):
        log.append((sim.now, payload))
        if payload < 22:
            sim.deliver("node", payload + 1, link, rng)
            sim.deliver("node", payload + 1, link, rng)

    sim.register("node", node)
    sim.schedule(0, "node", 0)
    sim.run_until(5_000)
    return log


def test_identical_seeds_replay_identical_histories():
    assert _drive(21) == _drive(21)


def test_different_seeds_diverge():
    assert _drive(21) != _drive(22)


def test_run_to_quiescence_stops_at_hard_limit():
    sim = Simulator(seed=1)

    def forever(payload):
        sim.schedule(100, "loop", None)

    sim.register("loop", forever)
    sim.schedule(0, "loop", None)
    sim.run_to_quiescence(hard_limit=1_000)
    assert sim.now <= 1_000


def test_trace_log_is_ndjson(tmp_path):
    out = tmp_path / "run.ndjson"
    with open(out, "w") as fh:
        sim = Simulator(seed=1, trace_file=fh)
        sim.trace("core", "start", detail=1)
        sim.trace("core", "stop")
    lines = out.read_text().strip().split("\n")
    assert len(lines) == 2
    import json

    rec = json.loads(lines[0])
    assert rec == {"component": "core", "detail": 1, "kind": "start", "t": 0}
