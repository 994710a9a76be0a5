"""In-memory harnesses and invariant oracles for the consensus layer.

RaftNet is a deterministic transport for scripted protocol scenarios.
run_fuzz_scenario drives a node group through randomized delivery orders,
message drops, artificial delays, and transient partitions, checking the
safety properties as it goes. Both are used heavily by the test suite.
"""

from __future__ import annotations

import heapq

from .raft import RaftNode, RaftTimers, Role
from .sim import RngStream

INF = float("inf")


class SafetyViolation(AssertionError):
    pass


def check_election_safety(leaders_by_term: dict[int, set]) -> None:
    for term, leaders in sorted(leaders_by_term.items()):
        if len(leaders) > 1:
            raise SafetyViolation(f"term {term} elected {sorted(leaders)}")


def check_log_matching(nodes) -> None:
    """If two logs share (index, term) they must be identical up to there."""
    nodes = list(nodes)
    for i in range(len(nodes)):
        for j in range(i + 1, len(nodes)):
            a, b = nodes[i].log, nodes[j].log
            n = min(len(a), len(b))
            divergence = n
            for k in range(n):
                if a[k].term != b[k].term or a[k].pid != b[k].pid:
                    divergence = k
                    break
            for k in range(divergence, n):
                if a[k].term == b[k].term:
                    raise SafetyViolation(
                        f"logs of {nodes[i].node_id} and {nodes[j].node_id} share "
                        f"term {a[k].term} at index {k + 1} after diverging at {divergence + 1}"
                    )


def check_applied_prefix(applied_by_node: dict[str, list]) -> None:
    """Applied command sequences must be prefix-comparable across nodes."""
    seqs = sorted(applied_by_node.items())
    for i in range(len(seqs)):
        for j in range(i + 1, len(seqs)):
            (na, a), (nb, b) = seqs[i], seqs[j]
            n = min(len(a), len(b))
            if a[:n] != b[:n]:
                raise SafetyViolation(f"applied logs of {na} and {nb} diverge")


def check_commit_bound(nodes) -> None:
    for node in nodes:
        if node.commit_index > len(node.log):
            raise SafetyViolation(f"{node.node_id} commit index beyond log end")


class RaftNet:
    """Deterministic FIFO-per-pair transport around a set of RaftNodes."""

    def __init__(
        self,
        node_ids,
        seed: int = 0,
        timers: RaftTimers | None = None,
        delay_ms: int = 1,
        drop: float = 0.0,
    ):
        if delay_ms < 1:
            raise ValueError("transport delay must be at least 1 ms")
        if not 0.0 <= drop < 1.0:
            raise ValueError("drop probability must lie in [0, 1)")
        self.seed = seed
        self.timers = timers or RaftTimers()
        self.delay_ms = delay_ms
        self.drop = drop
        self._drop_rng = RngStream(seed, "net-drop")
        self.now = 0
        self.nodes: dict[str, RaftNode] = {}
        for nid in node_ids:
            rng = RngStream(seed, f"raft:{nid}")
            self.nodes[nid] = RaftNode(nid, list(node_ids), rng, self.timers)
        self._heap: list = []
        self._seq = 0
        self.deadlines: dict[str, int | None] = {}
        self.crashed: set[str] = set()
        self.blocked: set[tuple[str, str]] = set()
        self.applied: dict[str, list] = {nid: [] for nid in node_ids}
        self.superseded: dict[str, list] = {nid: [] for nid in node_ids}
        self.leaders_by_term: dict[int, set] = {}

    # ------------------------------------------------------------ admin

    def start(self) -> None:
        for nid in sorted(self.nodes):
            self._absorb(nid, self.nodes[nid].start(self.now))

    def add_node(self, node: RaftNode) -> None:
        self.nodes[node.node_id] = node
        self.applied[node.node_id] = []
        self.superseded[node.node_id] = []
        self._absorb(node.node_id, node.start(self.now))

    def crash(self, nid: str) -> None:
        self.crashed.add(nid)
        self.deadlines[nid] = None

    def isolate(self, nid: str) -> None:
        for other in self.nodes:
            if other != nid:
                self.blocked.add((nid, other))
                self.blocked.add((other, nid))

    def heal(self) -> None:
        self.blocked.clear()

    # ------------------------------------------------------- operations

    def propose(self, nid: str, body, pid: str | None = None) -> str:
        node = self.nodes[nid]
        pid, out = node.propose(body, self.now, pid=pid)
        self._absorb(nid, out)
        return pid

    def reconfigure(self, nid: str, remove: str | None, add: str | None) -> str:
        node = self.nodes[nid]
        pid, out = node.reconfigure(remove, add, self.now)
        self._absorb(nid, out)
        return pid

    def live_leader(self) -> RaftNode | None:
        leaders = [
            n
            for nid, n in sorted(self.nodes.items())
            if nid not in self.crashed and n.role is Role.LEADER
        ]
        if not leaders:
            return None
        return max(leaders, key=lambda n: n.current_term)

    def wait_for_leader(self, timeout_ms: int = 5_000) -> RaftNode:
        deadline = self.now + timeout_ms
        while self.now < deadline:
            leader = self.live_leader()
            if leader is not None:
                return leader
            self.run_for(50)
        leader = self.live_leader()
        if leader is None:
            raise TimeoutError("no leader elected in time")
        return leader

    # -------------------------------------------------------- mechanics

    def _absorb(self, nid: str, out) -> None:
        node = self.nodes[nid]
        for dst, msg in out.messages:
            if (nid, dst) in self.blocked or dst in self.crashed:
                continue
            if dst not in self.nodes:
                continue
            if self.drop > 0.0 and self._drop_rng.random() < self.drop:
                continue
            self._seq += 1
            heapq.heappush(self._heap, (self.now + self.delay_ms, self._seq, dst, msg))
        if out.applied:
            self.applied[nid].extend(e.pid for e in out.applied)
        if out.superseded:
            self.superseded[nid].extend(out.superseded)
        if out.leader_elected:
            self.leaders_by_term.setdefault(node.current_term, set()).add(nid)
        self.deadlines[nid] = out.next_deadline

    def _next_time(self):
        t = self._heap[0][0] if self._heap else INF
        for nid, dl in sorted(self.deadlines.items()):
            if nid in self.crashed or dl is None:
                continue
            if dl < t:
                t = dl
        return t

    def run_until(self, t_end: int) -> None:
        while True:
            t = self._next_time()
            if t > t_end:
                break
            self.now = int(t)
            while self._heap and self._heap[0][0] == t:
                _, _, dst, msg = heapq.heappop(self._heap)
                if dst in self.crashed or dst not in self.nodes:
                    continue
                self._absorb(dst, self.nodes[dst].on_message(msg, self.now))
            for nid in sorted(self.nodes):
                if nid in self.crashed:
                    continue
                dl = self.deadlines.get(nid)
                if dl is not None and dl <= self.now:
                    self._absorb(nid, self.nodes[nid].on_timer(self.now))
        self.now = t_end

    def run_for(self, duration_ms: int) -> None:
        self.run_until(self.now + duration_ms)

    # ------------------------------------------------------- invariants

    def live_nodes(self):
        return [n for nid, n in sorted(self.nodes.items()) if nid not in self.crashed]

    def check_invariants(self) -> None:
        check_election_safety(self.leaders_by_term)
        check_log_matching(self.live_nodes())
        check_applied_prefix(
            {nid: seq for nid, seq in self.applied.items() if nid not in self.crashed}
        )
        check_commit_bound(self.live_nodes())


# ------------------------------------------------------------------ fuzz


class _FuzzWorld:
    """Adversarial scheduler: random delivery order, drops, delays, splits."""

    def __init__(self, seed: int, nodes: int = 3):
        self.rng = RngStream(seed, "fuzz")
        self.drop = self.rng.uniform(0.0, 0.3)
        self.ids = [f"n{i}" for i in range(nodes)]
        self.nodes = {
            nid: RaftNode(nid, self.ids, RngStream(seed, f"raft:{nid}"))
            for nid in self.ids
        }
        self.now = 0
        self.inflight: list[tuple[str, object]] = []
        self.blocked: set[tuple[str, str]] = set()
        self.applied: dict[str, list] = {nid: [] for nid in self.ids}
        self.leaders_by_term: dict[int, set] = {}
        self.proposed = 0

    def absorb(self, nid: str, out) -> None:
        for dst, msg in out.messages:
            if (nid, dst) in self.blocked:
                continue
            if self.rng.random() < self.drop:
                continue
            self.inflight.append((dst, msg))
        if out.applied:
            self.applied[nid].extend(e.pid for e in out.applied)
        if out.leader_elected:
            self.leaders_by_term.setdefault(
                self.nodes[nid].current_term, set()
            ).add(nid)

    def deliver_random(self) -> None:
        if not self.inflight:
            return
        i = self.rng.randrange(len(self.inflight))
        self.inflight[i], self.inflight[-1] = self.inflight[-1], self.inflight[i]
        dst, msg = self.inflight.pop()
        self.absorb(dst, self.nodes[dst].on_message(msg, self.now))

    def advance_time(self) -> None:
        self.now += self.rng.randint(5, 120)
        for nid in self.ids:
            node = self.nodes[nid]
            self.absorb(nid, node.on_timer(self.now))

    def propose_random(self) -> None:
        nid = self.rng.choice(self.ids)
        self.proposed += 1
        _, out = self.nodes[nid].propose(f"cmd{self.proposed}", self.now)
        self.absorb(nid, out)

    def toggle_partition(self) -> None:
        a, b = self.rng.sample(self.ids, 2)
        pair = (a, b)
        if pair in self.blocked:
            self.blocked.discard(pair)
        else:
            self.blocked.add(pair)

    def check(self) -> None:
        check_election_safety(self.leaders_by_term)
        check_log_matching(self.nodes.values())
        check_applied_prefix(self.applied)
        check_commit_bound(self.nodes.values())

    def settle(self) -> None:
        """Heal and drain so liveness can be asserted at scenario end."""
        self.blocked.clear()
        self.drop = 0.0
        for _ in range(400):
            if self.inflight:
                self.deliver_random()
            else:
                self.advance_time()


def run_fuzz_scenario(seed: int, steps: int = 10_000, check_every: int = 2_000) -> dict:
    """One randomized consensus scenario; raises SafetyViolation on any breach."""
    world = _FuzzWorld(seed)
    rng = world.rng
    for step in range(steps):
        r = rng.random()
        if r < 0.70 and world.inflight:
            world.deliver_random()
        elif r < 0.88:
            world.advance_time()
        elif r < 0.96:
            world.propose_random()
        else:
            world.toggle_partition()
        if (step + 1) % check_every == 0:
            world.check()
    world.settle()
    world.check()
    committed = max(n.commit_index for n in world.nodes.values())
    terms = max(n.current_term for n in world.nodes.values())
    if world.leaders_by_term and committed == 0:
        raise SafetyViolation("a leader existed but nothing ever committed")
    return {
        "seed": seed,
        "drop": world.drop,
        "proposed": world.proposed,
        "committed": committed,
        "max_term": terms,
        "leaders_seen": sum(len(v) for v in world.leaders_by_term.values()),
    }
