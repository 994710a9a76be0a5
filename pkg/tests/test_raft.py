"""Consensus layer tests: scripted protocol scenarios plus a fuzz smoke run.

The full-size randomized suite lives in the acceptance module; here each
property gets a focused scenario with deterministic seeds.
"""

import pytest

from rksim.fuzz import RaftNet, SafetyViolation, check_log_matching, run_fuzz_scenario
from rksim.raft import COMMITTED, REJECTED, SUPERSEDED, RaftNode, Role
from rksim.sim import RngStream

IDS = ["a", "b", "c"]


def fresh_net(seed=1, **kw):
    net = RaftNet(IDS, seed=seed, **kw)
    net.start()
    return net


class TestElection:
    def test_single_leader_emerges(self):
        net = fresh_net()
        leader = net.wait_for_leader()
        assert leader.role is Role.LEADER
        others = [n for n in net.live_nodes() if n is not leader]
        net.run_for(500)
        for node in others:
            assert node.role is Role.FOLLOWER
            assert node.leader_id == leader.node_id
        net.check_invariants()

    def test_leadership_is_stable_without_faults(self):
        net = fresh_net()
        leader = net.wait_for_leader()
        term = leader.current_term
        net.run_for(10_000)
        assert net.live_leader() is leader
        assert leader.current_term == term

    def test_crashed_leader_is_replaced(self):
        net = fresh_net()
        old = net.wait_for_leader()
        net.crash(old.node_id)
        new = net.wait_for_leader()
        assert new.node_id != old.node_id
        assert new.current_term > old.current_term

    def test_stale_candidate_with_short_log_is_refused(self):
        net = fresh_net()
        leader = net.wait_for_leader()
        net.propose(leader.node_id, "x")
        net.run_for(500)
        # c gets cut off, then campaigns with a log missing the new entry
        lagger = [n for n in net.live_nodes() if n is not leader][0]
        net.isolate(lagger.node_id)
        net.propose(leader.node_id, "y")
        net.run_for(1_000)
        net.heal()
        net.run_for(2_000)
        final = net.live_leader()
        assert final is not None
        assert "y" in [e.body for e in final.log]
        net.check_invariants()

    def test_split_votes_resolve_quickly(self):
        # Across many seeded cold starts the first leader should appear
        # within a handful of terms nearly always.
        ok = 0
        trials = 300
        for seed in range(trials):
            net = RaftNet(IDS, seed=seed)
            net.start()
            leader = net.wait_for_leader(timeout_ms=20_000)
            if leader.current_term <= 10:
                ok += 1
        assert ok / trials >= 0.99


class TestReplication:
    def test_leader_proposal_commits_everywhere(self):
        net = fresh_net()
        leader = net.wait_for_leader()
        pid = net.propose(leader.node_id, {"op": "set", "v": 1})
        net.run_for(1_000)
        assert leader.tickets[pid].status == COMMITTED
        for node in net.live_nodes():
            assert pid in [e.pid for e in node.log]
            assert pid in net.applied[node.node_id]
        net.check_invariants()

    def test_follower_proposal_is_forwarded_to_leader(self):
        net = fresh_net()
        leader = net.wait_for_leader()
        follower = [n for n in net.live_nodes() if n is not leader][0]
        pid = net.propose(follower.node_id, "from-follower")
        net.run_for(1_000)
        assert follower.tickets[pid].status == COMMITTED
        applied = [net.applied[n.node_id] for n in net.live_nodes()]
        assert all(pid in seq for seq in applied)

    def test_commit_requires_majority(self):
        net = fresh_net()
        leader = net.wait_for_leader()
        net.isolate(leader.node_id)
        pid = net.propose(leader.node_id, "lonely")
        net.run_for(500)
        assert leader.tickets[pid].status not in (COMMITTED,)
        assert all(
            pid not in net.applied[n.node_id] for n in net.live_nodes()
        )

    def test_deposed_leader_suffix_is_truncated_and_superseded(self):
        net = fresh_net()
        old = net.wait_for_leader()
        net.isolate(old.node_id)
        pid = net.propose(old.node_id, "doomed")
        net.run_for(1_500)
        new = net.live_leader()
        assert new is not None and new is not old
        net.propose(new.node_id, "winner")
        net.run_for(500)
        net.heal()
        net.run_for(2_000)
        assert old.role is Role.FOLLOWER
        assert old.tickets[pid].status == SUPERSEDED
        assert pid in net.superseded[old.node_id]
        assert pid not in [e.pid for e in new.log]
        net.check_invariants()

    def test_liveness_under_heavy_drop(self):
        net = fresh_net(seed=5, drop=0.3)
        net.wait_for_leader(timeout_ms=30_000)
        pids = []
        for i in range(12):
            nid = IDS[i % 3]
            pids.append(net.propose(nid, f"cmd{i}"))
            net.run_for(400)
        deadline = net.now + 120_000
        while net.now < deadline:
            done = all(
                pid in net.applied[nid] for pid in pids for nid in IDS
            )
            if done:
                break
            net.run_for(1_000)
        for nid in IDS:
            for pid in pids:
                assert pid in net.applied[nid], f"{pid} missing at {nid}"
        net.check_invariants()


class TestMembership:
    def _converged_group(self):
        net = fresh_net()
        leader = net.wait_for_leader()
        for i in range(3):
            net.propose(leader.node_id, f"pre{i}")
        net.run_for(1_000)
        return net, leader

    def test_replace_node_and_catch_up(self):
        net, leader = self._converged_group()
        victim = [nid for nid in IDS if nid != leader.node_id][0]
        net.crash(victim)
        leader = net.wait_for_leader()
        joiner = RaftNode(
            "d",
            [n for n in IDS if n != victim] + ["d"],
            RngStream(1, "raft:d"),
            net.timers,
            genesis_voters=IDS,
        )
        net.add_node(joiner)
        pid = net.reconfigure(leader.node_id, remove=victim, add="d")
        net.run_for(3_000)
        assert leader.tickets[pid].status == COMMITTED
        assert set(leader.voters) == {"a", "b", "c", "d"} - {victim}
        assert set(joiner.voters) == set(leader.voters)
        assert [e.pid for e in joiner.log] == [e.pid for e in leader.log]
        assert joiner.last_applied == leader.last_applied
        check_log_matching([leader, joiner])

    def test_joiner_participates_in_commits(self):
        net, leader = self._converged_group()
        victim = [nid for nid in IDS if nid != leader.node_id][0]
        net.crash(victim)
        leader = net.wait_for_leader()
        joiner = RaftNode(
            "d",
            [n for n in IDS if n != victim] + ["d"],
            RngStream(1, "raft:d"),
            net.timers,
            genesis_voters=IDS,
        )
        net.add_node(joiner)
        net.reconfigure(leader.node_id, remove=victim, add="d")
        net.run_for(3_000)
        pid = net.propose(joiner.node_id, "from-joiner")
        net.run_for(2_000)
        assert joiner.tickets[pid].status == COMMITTED

    def test_noop_membership_change_is_rejected(self):
        net, leader = self._converged_group()
        with pytest.raises(ValueError):
            leader.reconfigure("c", "c", net.now)

    def test_only_one_membership_change_in_flight(self):
        net, leader = self._converged_group()
        pid1, _ = leader.reconfigure("c", "d", net.now)
        pid2, _ = leader.reconfigure("c", "e", net.now)
        assert leader.tickets[pid1].status not in (REJECTED,)
        assert leader.tickets[pid2].status == REJECTED


class TestSafetyChecks:
    def test_log_matching_checker_catches_divergence(self):
        from rksim.raft import LogEntry

        a = RaftNode("a", IDS, RngStream(0, "a"))
        b = RaftNode("b", IDS, RngStream(0, "b"))
        a.log = [LogEntry(1, 1, "p1", None), LogEntry(2, 2, "p2", None)]
        b.log = [LogEntry(1, 1, "px", None), LogEntry(2, 2, "p2", None)]
        with pytest.raises(SafetyViolation):
            check_log_matching([a, b])


def test_fuzz_smoke():
    # Small sample of the full acceptance fuzz sweep.
    for seed in range(25):
        stats = run_fuzz_scenario(seed, steps=2_000, check_every=500)
        assert stats["committed"] >= 0
