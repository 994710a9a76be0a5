"""Raft consensus state machine.

Nodes are pure: they react to messages and timer callbacks and return an
Output bundle (messages to send, newly applied entries, the next timer
deadline). Transport, clocks, and rng live outside, which keeps the same
implementation usable from the event-driven simulator and from scripted
or fuzzed test harnesses.

Supported: leader election with randomized timeouts, log replication and
commitment, follower-to-leader proposal forwarding, and single-entry
membership changes applied on append. Persistence and snapshots are out
of scope; a restarted node rejoins empty through a membership change.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Role(Enum):
    FOLLOWER = "follower"
    CANDIDATE = "candidate"
    LEADER = "leader"


PENDING = "pending"
COMMITTED = "committed"
SUPERSEDED = "superseded"
REJECTED = "rejected"


@dataclass(slots=True)
class LogEntry:
    term: int
    index: int
    pid: str
    body: object


@dataclass(slots=True)
class ConfigChange:
    """Membership delta: remove one voter id, add another (either optional)."""

    remove: str | None = None
    add: str | None = None


@dataclass(slots=True)
class RequestVote:
    term: int
    candidate: str
    last_log_index: int
    last_log_term: int


@dataclass(slots=True)
class VoteReply:
    term: int
    voter: str
    granted: bool


@dataclass(slots=True)
class AppendEntries:
    term: int
    leader: str
    prev_index: int
    prev_term: int
    entries: tuple
    commit: int


@dataclass(slots=True)
class AppendReply:
    term: int
    follower: str
    success: bool
    match_index: int
    hint: int


@dataclass(slots=True)
class ForwardPropose:
    pid: str
    body: object
    origin: str


@dataclass(slots=True)
class Ticket:
    pid: str
    status: str = PENDING
    index: int = 0


@dataclass(slots=True)
class Output:
    """Everything a node wants done after handling one stimulus."""

    messages: list = field(default_factory=list)
    applied: list = field(default_factory=list)
    superseded: list = field(default_factory=list)
    next_deadline: int | None = None
    leader_elected: bool = False


@dataclass(slots=True)
class RaftTimers:
    election_timeout_min_ms: int = 150
    election_timeout_max_ms: int = 300
    heartbeat_interval_ms: int = 50
    forward_retry_ms: int = 200


class RaftNode:
    """One consensus participant."""

    def __init__(
        self,
        node_id: str,
        voters,
        rng,
        timers: RaftTimers | None = None,
        genesis_voters=None,
    ):
        if node_id not in voters:
            raise ValueError("node must be part of its own voter set")
        self.node_id = node_id
        self.voters = tuple(sorted(voters))
        # Base set that membership changes in the log are replayed against.
        # A node added later starts from the group's genesis membership.
        self.initial_voters = tuple(sorted(genesis_voters)) if genesis_voters else self.voters
        self.rng = rng
        self.timers = timers or RaftTimers()

        self.current_term = 0
        self.voted_for: str | None = None
        self.log: list[LogEntry] = []
        self.commit_index = 0
        self.last_applied = 0
        self.role = Role.FOLLOWER
        self.leader_id: str | None = None
        self.votes_received: set[str] = set()
        self.next_index: dict[str, int] = {}
        self.match_index: dict[str, int] = {}

        self.election_deadline = 0
        self.heartbeat_due = 0
        self.forward_due = 0

        self.tickets: dict[str, Ticket] = {}
        self.pending_forwards: dict[str, object] = {}
        self._pids_in_log: set[str] = set()
        self._pid_counter = 0

    # --------------------------------------------------------- helpers

    def _last_index(self) -> int:
        return len(self.log)

    def _last_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def _entry(self, index: int) -> LogEntry:
        return self.log[index - 1]

    def _peers(self):
        return [v for v in self.voters if v != self.node_id]

    def _majority(self) -> int:
        return len(self.voters) // 2 + 1

    def _reset_election_deadline(self, now: int) -> None:
        lo = self.timers.election_timeout_min_ms
        hi = self.timers.election_timeout_max_ms
        self.election_deadline = now + self.rng.randint(lo, hi)

    def _compute_next_deadline(self) -> int:
        if self.role is Role.LEADER:
            deadline = self.heartbeat_due
        else:
            deadline = self.election_deadline
        if self.pending_forwards:
            deadline = min(deadline, self.forward_due)
        return deadline

    def _finish(self, out: Output) -> Output:
        out.next_deadline = self._compute_next_deadline()
        return out

    def new_pid(self) -> str:
        self._pid_counter += 1
        return f"{self.node_id}:{self._pid_counter}"

    def is_quiescent(self) -> bool:
        """True when this node has nothing left to push forward."""
        synced = self.last_applied == self.commit_index == self._last_index()
        no_work = not self.pending_forwards and not any(
            t.status == PENDING for t in self.tickets.values()
        )
        if self.role is Role.LEADER:
            peers_synced = all(
                self.match_index.get(p, 0) == self._last_index() for p in self._peers()
            )
            return synced and no_work and peers_synced
        return synced and no_work and self.role is Role.FOLLOWER

    # ----------------------------------------------------------- start

    def start(self, now: int) -> Output:
        self._reset_election_deadline(now)
        return self._finish(Output())

    # ---------------------------------------------------------- timers

    def on_timer(self, now: int) -> Output:
        out = Output()
        if self.role is Role.LEADER:
            if now >= self.heartbeat_due:
                self._broadcast_appends(out, now)
        elif now >= self.election_deadline:
            self._start_election(out, now)
        if self.pending_forwards and now >= self.forward_due:
            self._send_forwards(out, now)
        return self._finish(out)

    def _start_election(self, out: Output, now: int) -> None:
        if self.node_id not in self.voters:
            # A node removed from the group never campaigns.
            self._reset_election_deadline(now)
            return
        self.current_term += 1
        self.role = Role.CANDIDATE
        self.voted_for = self.node_id
        self.votes_received = {self.node_id}
        self.leader_id = None
        self._reset_election_deadline(now)
        if len(self.voters) == 1:
            self._become_leader(out, now)
            return
        msg = RequestVote(
            self.current_term, self.node_id, self._last_index(), self._last_term()
        )
        for peer in self._peers():
            out.messages.append((peer, msg))

    def _become_leader(self, out: Output, now: int) -> None:
        self.role = Role.LEADER
        self.leader_id = self.node_id
        self.next_index = {p: self._last_index() + 1 for p in self._peers()}
        self.match_index = {p: 0 for p in self._peers()}
        out.leader_elected = True
        # Barrier entry lets entries from older terms commit promptly.
        self._append_local(self.new_pid(), None)
        # Buffered proposals ride on the new leadership.
        for pid, body in sorted(self.pending_forwards.items()):
            if pid not in self._pids_in_log:
                self._append_local(pid, body)
        self.pending_forwards.clear()
        self.heartbeat_due = now
        self._broadcast_appends(out, now)
        self._advance_commit(out, now)

    def _append_local(self, pid: str, body) -> LogEntry:
        entry = LogEntry(self.current_term, self._last_index() + 1, pid, body)
        self.log.append(entry)
        self._pids_in_log.add(pid)
        if isinstance(body, ConfigChange):
            self._apply_config(body)
        return entry

    # ------------------------------------------------------- proposals

    def propose(self, body, now: int, pid: str | None = None) -> tuple[str, Output]:
        """Submit a command. Forwarded to the leader when we are not it."""
        out = Output()
        if pid is None:
            pid = self.new_pid()
        ticket = Ticket(pid)
        self.tickets[pid] = ticket
        if isinstance(body, ConfigChange) and self.role is Role.LEADER:
            if self._config_change_in_flight():
                ticket.status = REJECTED
                return pid, self._finish(out)
        if self.role is Role.LEADER:
            self._append_local(pid, body)
            self._broadcast_appends(out, now)
            self._advance_commit(out, now)
        else:
            self.pending_forwards[pid] = body
            self.forward_due = now + self.timers.forward_retry_ms
            if self.leader_id is not None and self.leader_id != self.node_id:
                out.messages.append((self.leader_id, ForwardPropose(pid, body, self.node_id)))
        return pid, self._finish(out)

    def reconfigure(self, remove: str | None, add: str | None, now: int):
        if remove == add:
            raise ValueError("membership change must alter the voter set")
        return self.propose(ConfigChange(remove=remove, add=add), now)

    def _config_change_in_flight(self) -> bool:
        for entry in self.log[self.commit_index:]:
            if isinstance(entry.body, ConfigChange):
                return True
        return False

    def _send_forwards(self, out: Output, now: int) -> None:
        self.forward_due = now + self.timers.forward_retry_ms
        if self.leader_id is None or self.leader_id == self.node_id:
            return
        for pid, body in sorted(self.pending_forwards.items()):
            out.messages.append((self.leader_id, ForwardPropose(pid, body, self.node_id)))

    # --------------------------------------------------------- inbound

    def on_message(self, msg, now: int) -> Output:
        out = Output()
        term = getattr(msg, "term", None)
        if term is not None and term > self.current_term:
            self._step_down(term)
        if isinstance(msg, RequestVote):
            self._on_request_vote(msg, out, now)
        elif isinstance(msg, VoteReply):
            self._on_vote_reply(msg, out, now)
        elif isinstance(msg, AppendEntries):
            self._on_append_entries(msg, out, now)
        elif isinstance(msg, AppendReply):
            self._on_append_reply(msg, out, now)
        elif isinstance(msg, ForwardPropose):
            self._on_forward(msg, out, now)
        else:
            raise TypeError(f"unknown raft message {msg!r}")
        return self._finish(out)

    def _step_down(self, term: int) -> None:
        self.current_term = term
        self.role = Role.FOLLOWER
        self.voted_for = None
        self.votes_received = set()

    def _on_request_vote(self, msg: RequestVote, out: Output, now: int) -> None:
        granted = False
        if msg.term >= self.current_term:
            up_to_date = msg.last_log_term > self._last_term() or (
                msg.last_log_term == self._last_term()
                and msg.last_log_index >= self._last_index()
            )
            if self.voted_for in (None, msg.candidate) and up_to_date:
                granted = True
                self.voted_for = msg.candidate
                self._reset_election_deadline(now)
        out.messages.append(
            (msg.candidate, VoteReply(self.current_term, self.node_id, granted))
        )

    def _on_vote_reply(self, msg: VoteReply, out: Output, now: int) -> None:
        if self.role is not Role.CANDIDATE or msg.term != self.current_term:
            return
        if msg.granted and msg.voter in self.voters:
            self.votes_received.add(msg.voter)
            if len(self.votes_received) >= self._majority():
                self._become_leader(out, now)

    def _on_append_entries(self, msg: AppendEntries, out: Output, now: int) -> None:
        if msg.term < self.current_term:
            out.messages.append(
                (msg.leader, AppendReply(self.current_term, self.node_id, False, 0, 0))
            )
            return
        if self.role is not Role.FOLLOWER:
            self.role = Role.FOLLOWER
            self.votes_received = set()
        self.leader_id = msg.leader
        self._reset_election_deadline(now)

        if msg.prev_index > self._last_index():
            reply = AppendReply(
                self.current_term, self.node_id, False, 0, self._last_index()
            )
            out.messages.append((msg.leader, reply))
            return
        if msg.prev_index > 0 and self._entry(msg.prev_index).term != msg.prev_term:
            reply = AppendReply(
                self.current_term, self.node_id, False, 0, msg.prev_index - 1
            )
            out.messages.append((msg.leader, reply))
            return

        insert_at = msg.prev_index
        for entry in msg.entries:
            if entry.index <= self._last_index():
                if self._entry(entry.index).term == entry.term:
                    insert_at = entry.index
                    continue
                self._truncate_from(entry.index, out)
            self.log.append(LogEntry(entry.term, entry.index, entry.pid, entry.body))
            self._pids_in_log.add(entry.pid)
            if isinstance(entry.body, ConfigChange):
                self._apply_config(entry.body)
            insert_at = entry.index

        if msg.commit > self.commit_index:
            self.commit_index = min(msg.commit, insert_at)
            self._apply_ready(out)
        reply = AppendReply(self.current_term, self.node_id, True, insert_at, 0)
        out.messages.append((msg.leader, reply))

    def _truncate_from(self, index: int, out: Output) -> None:
        if index <= self.commit_index:
            raise AssertionError("attempted to truncate a committed entry")
        removed = self.log[index - 1:]
        del self.log[index - 1:]
        config_dropped = False
        for entry in removed:
            self._pids_in_log.discard(entry.pid)
            if isinstance(entry.body, ConfigChange):
                config_dropped = True
            ticket = self.tickets.get(entry.pid)
            if ticket is not None and ticket.status == PENDING:
                ticket.status = SUPERSEDED
                out.superseded.append(entry.pid)
        if config_dropped:
            self._recompute_voters()

    def _apply_config(self, change: ConfigChange) -> None:
        voters = set(self.voters)
        if change.remove is not None:
            voters.discard(change.remove)
        if change.add is not None:
            voters.add(change.add)
        self.voters = tuple(sorted(voters))
        if self.role is Role.LEADER:
            for peer in self._peers():
                self.next_index.setdefault(peer, self._last_index() + 1)
                self.match_index.setdefault(peer, 0)

    def _recompute_voters(self) -> None:
        voters = set(self.initial_voters)
        for entry in self.log:
            if isinstance(entry.body, ConfigChange):
                if entry.body.remove is not None:
                    voters.discard(entry.body.remove)
                if entry.body.add is not None:
                    voters.add(entry.body.add)
        self.voters = tuple(sorted(voters))

    def _on_append_reply(self, msg: AppendReply, out: Output, now: int) -> None:
        if self.role is not Role.LEADER or msg.term > self.current_term:
            return
        peer = msg.follower
        if peer not in self.next_index:
            return
        if msg.success:
            if msg.match_index > self.match_index.get(peer, 0):
                self.match_index[peer] = msg.match_index
            self.next_index[peer] = self.match_index[peer] + 1
            self._advance_commit(out, now)
            if self.next_index[peer] <= self._last_index():
                self._send_append(peer, out)
        else:
            self.next_index[peer] = max(1, min(self.next_index[peer] - 1, msg.hint + 1))
            self._send_append(peer, out)

    def _on_forward(self, msg: ForwardPropose, out: Output, now: int) -> None:
        if self.role is Role.LEADER:
            if isinstance(msg.body, ConfigChange) and self._config_change_in_flight():
                # The origin keeps retrying; accept once the pending one lands.
                return
            if msg.pid not in self._pids_in_log:
                self._append_local(msg.pid, msg.body)
                self._broadcast_appends(out, now)
                self._advance_commit(out, now)
        elif self.leader_id is not None and self.leader_id != self.node_id:
            out.messages.append((self.leader_id, msg))
        else:
            self.pending_forwards.setdefault(msg.pid, msg.body)
            self.forward_due = min(self.forward_due, now + self.timers.forward_retry_ms)

    # ------------------------------------------------------ replication

    def _send_append(self, peer: str, out: Output) -> None:
        nxt = self.next_index.get(peer, self._last_index() + 1)
        prev_index = nxt - 1
        prev_term = self._entry(prev_index).term if prev_index > 0 else 0
        entries = tuple(self.log[prev_index:])
        msg = AppendEntries(
            self.current_term,
            self.node_id,
            prev_index,
            prev_term,
            entries,
            self.commit_index,
        )
        out.messages.append((peer, msg))

    def _broadcast_appends(self, out: Output, now: int) -> None:
        for peer in self._peers():
            self._send_append(peer, out)
        self.heartbeat_due = now + self.timers.heartbeat_interval_ms

    def _advance_commit(self, out: Output, now: int) -> None:
        advanced = False
        for n in range(self.commit_index + 1, self._last_index() + 1):
            if self._entry(n).term != self.current_term:
                continue
            acks = 1 + sum(
                1 for p in self._peers() if self.match_index.get(p, 0) >= n
            )
            if acks >= self._majority():
                self.commit_index = n
                advanced = True
        if advanced:
            self._apply_ready(out)
            # push the new commit index out immediately
            self._broadcast_appends(out, now)

    def _apply_ready(self, out: Output) -> None:
        while self.last_applied < self.commit_index:
            self.last_applied += 1
            entry = self._entry(self.last_applied)
            out.applied.append(entry)
            ticket = self.tickets.get(entry.pid)
            if ticket is not None and ticket.status == PENDING:
                ticket.status = COMMITTED
                ticket.index = entry.index
            self.pending_forwards.pop(entry.pid, None)
