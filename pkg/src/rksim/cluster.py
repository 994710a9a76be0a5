"""Host fleet and GPU resource accounting.

Each host tracks three quantities: capacity (its physical GPUs),
committed GPUs (exclusively bound to running work right now), and
subscribed GPUs (the sum of hosted replicas' requested GPUs). The
subscription ratio S / (G * R) measures oversubscription: replicas
subscribe without holding devices, and only an executing replica
commits real GPUs.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

from .sim import InvariantViolation

MAX_GPUS_PER_HOST = 8


@dataclass(frozen=True, slots=True)
class ResourceRequest:
    """What one kernel replica (or session container) asks a host for."""

    millicpus: int = 0
    mem_mb: int = 0
    gpus: int = 0
    vram_gb: float = 0.0

    def __post_init__(self):
        if self.millicpus < 0 or self.mem_mb < 0 or self.gpus < 0 or self.vram_gb < 0:
            raise ValueError("resource requests must be non-negative")


@dataclass(slots=True)
class GpuGrant:
    grant_id: int
    host_id: int
    holder: str
    devices: tuple[int, ...]

    @property
    def gpus(self) -> int:
        return len(self.devices)


@dataclass(slots=True)
class PrewarmPool:
    """Warm containers standing by on one host."""

    ready: int = 0
    provisioning: int = 0

    @property
    def inbound(self) -> int:
        return self.ready + self.provisioning


class Host:
    def __init__(self, host_id: int, gpu_capacity: int):
        if not 1 <= gpu_capacity <= MAX_GPUS_PER_HOST:
            raise ValueError(
                f"gpu capacity must be within 1..{MAX_GPUS_PER_HOST}, got {gpu_capacity}"
            )
        self.host_id = host_id
        self.gpu_capacity = gpu_capacity
        self.committed = 0
        self.subscribed_gpus = 0
        self.subscribed_millicpus = 0
        self.subscribed_mem_mb = 0
        self._free_devices = list(range(gpu_capacity))
        heapq.heapify(self._free_devices)
        self.grants: dict[int, GpuGrant] = {}
        self.replicas: dict[str, ResourceRequest] = {}
        self.pool = PrewarmPool()
        self.alive = True

    # ------------------------------------------------------ commitments

    @property
    def free_gpus(self) -> int:
        return self.gpu_capacity - self.committed

    def can_commit(self, gpus: int) -> bool:
        return self.alive and gpus <= self.free_gpus

    def try_commit_gpus(self, holder: str, gpus: int, grant_id: int) -> GpuGrant | None:
        """Bind devices exclusively. Lowest-numbered free devices first."""
        if gpus < 0:
            raise ValueError("cannot commit a negative gpu count")
        if not self.can_commit(gpus):
            return None
        devices = tuple(heapq.heappop(self._free_devices) for _ in range(gpus))
        grant = GpuGrant(grant_id, self.host_id, holder, devices)
        self.grants[grant_id] = grant
        self.committed += gpus
        self._check_bounds()
        return grant

    def release_gpus(self, grant_id: int) -> None:
        grant = self.grants.pop(grant_id, None)
        if grant is None:
            raise InvariantViolation(
                f"host {self.host_id}: releasing unknown grant {grant_id}"
            )
        for device in grant.devices:
            heapq.heappush(self._free_devices, device)
        self.committed -= grant.gpus
        self._check_bounds()

    def _check_bounds(self) -> None:
        if not 0 <= self.committed <= self.gpu_capacity:
            raise InvariantViolation(
                f"host {self.host_id}: committed {self.committed} outside "
                f"[0, {self.gpu_capacity}]"
            )
        if len(self._free_devices) != self.gpu_capacity - self.committed:
            raise InvariantViolation(f"host {self.host_id}: device ledger skewed")

    # ---------------------------------------------------- subscriptions

    def subscribe(self, replica_key: str, request: ResourceRequest) -> None:
        if replica_key in self.replicas:
            raise InvariantViolation(
                f"replica {replica_key} already subscribed on host {self.host_id}"
            )
        self.replicas[replica_key] = request
        self.subscribed_gpus += request.gpus
        self.subscribed_millicpus += request.millicpus
        self.subscribed_mem_mb += request.mem_mb

    def unsubscribe(self, replica_key: str) -> ResourceRequest:
        request = self.replicas.pop(replica_key, None)
        if request is None:
            raise InvariantViolation(
                f"replica {replica_key} is not subscribed on host {self.host_id}"
            )
        self.subscribed_gpus -= request.gpus
        self.subscribed_millicpus -= request.millicpus
        self.subscribed_mem_mb -= request.mem_mb
        if self.subscribed_gpus < 0:
            raise InvariantViolation(f"host {self.host_id}: negative subscription")
        return request

    def subscription_ratio(self, replication_factor: int) -> float:
        return self.subscribed_gpus / (self.gpu_capacity * replication_factor)

    def audit_subscriptions(self) -> None:
        expected = sum(r.gpus for r in self.replicas.values())
        if expected != self.subscribed_gpus:
            raise InvariantViolation(
                f"host {self.host_id}: subscribed {self.subscribed_gpus} != "
                f"sum of replica requests {expected}"
            )

    def snapshot(self, replication_factor: int) -> dict:
        return {
            "host_id": self.host_id,
            "gpus": self.gpu_capacity,
            "committed": self.committed,
            "subscribed": self.subscribed_gpus,
            "sr": round(self.subscription_ratio(replication_factor), 6),
            "replicas": len(self.replicas),
            "pool_ready": self.pool.ready,
        }


@dataclass(slots=True)
class ProvisioningHost:
    """A host ordered from the provider but not yet live."""

    host_id: int
    gpu_capacity: int
    ready_at: int
    reserved_for: list = field(default_factory=list)


class Cluster:
    """The set of live hosts plus cluster-wide accounting."""

    def __init__(self, replication_factor: int = 3, gpus_per_host: int = 8):
        self.replication_factor = replication_factor
        self.gpus_per_host = gpus_per_host
        self.hosts: dict[int, Host] = {}
        self._next_host_id = 1
        self._next_grant_id = 1

    def new_grant_id(self) -> int:
        gid = self._next_grant_id
        self._next_grant_id += 1
        return gid

    def add_host(self, gpu_capacity: int | None = None) -> Host:
        host = Host(self._next_host_id, gpu_capacity or self.gpus_per_host)
        self.hosts[host.host_id] = host
        self._next_host_id += 1
        return host

    def allocate_host_id(self) -> int:
        hid = self._next_host_id
        self._next_host_id += 1
        return hid

    def adopt_host(self, host_id: int, gpu_capacity: int) -> Host:
        """Turn a provisioned-host order into a live host."""
        host = Host(host_id, gpu_capacity)
        self.hosts[host_id] = host
        return host

    def remove_host(self, host_id: int) -> Host:
        host = self.hosts.get(host_id)
        if host is None:
            raise InvariantViolation(f"removing unknown host {host_id}")
        if host.committed > 0 or host.replicas:
            raise InvariantViolation(
                f"host {host_id} still has work: committed={host.committed} "
                f"replicas={len(host.replicas)}"
            )
        host.alive = False
        del self.hosts[host_id]
        return host

    # ------------------------------------------------------- aggregates

    def total_gpus(self) -> int:
        return sum(h.gpu_capacity for h in self.hosts.values())

    def total_committed(self) -> int:
        return sum(h.committed for h in self.hosts.values())

    def total_subscribed(self) -> int:
        return sum(h.subscribed_gpus for h in self.hosts.values())

    def cluster_sr(self) -> float | None:
        """Cluster-wide subscription ratio, None for an empty cluster."""
        denom = self.total_gpus() * self.replication_factor
        if denom == 0:
            return None
        return self.total_subscribed() / denom

    def sr_limit(self, floor: float) -> float | None:
        """Dynamic placement limit: the current cluster-wide SR, floored.

        The floor keeps a cold cluster schedulable; once average
        subscription rises past it the live average is the limit.
        """
        sr = self.cluster_sr()
        if sr is None:
            return None
        return max(sr, floor)

    def hosts_sorted(self):
        return [self.hosts[hid] for hid in sorted(self.hosts)]

    def audit(self) -> None:
        for host in self.hosts.values():
            host.audit_subscriptions()
            host._check_bounds()
