"""Remote object store and per-host cache model.

Objects are versioned blobs addressed by key. Reads and writes cost
latency sampled from calibrated distributions, scaled linearly by object
size relative to the reference size. Each host keeps an LRU cache so a
repeat read is a cheap local copy instead of a remote fetch.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

from . import distributions as dist
from .sim import InvariantViolation

MB = 1024 * 1024
GB = 1024 * MB

# Calibration targets for the latency models. The replication (sync)
# distribution pins its published P90/P95/P99 exactly through quantile
# anchors; the read and write models are lognormals pinned at P99 with
# the median an eighth of it.
DEFAULT_OBJECT_BYTES = 1 * GB
READ_P99_MS = 3_950.0
WRITE_P99_MS = 7_070.0
SYNC_ANCHORS = [
    (0.0, 2.0),
    (0.50, 20.0),
    (0.90, 54.79),
    (0.95, 66.69),
    (0.99, 268.25),
]
SYNC_TAIL_MEAN_MS = 120.0

DEFAULT_CACHE_BYTES = 16 * GB
CACHE_HIT_MS_PER_100MB = 1.0


def default_read_dist():
    return dist.LogNormal.from_p99(READ_P99_MS)


def default_write_dist():
    return dist.LogNormal.from_p99(WRITE_P99_MS)


def default_sync_dist():
    return dist.Quantile(SYNC_ANCHORS, tail_mean=SYNC_TAIL_MEAN_MS)


@dataclass(slots=True)
class StoredObject:
    key: str
    size_bytes: int
    version: int


class NodeCache:
    """Fixed-capacity LRU cache of store objects held on one host."""

    def __init__(self, capacity_bytes: int = DEFAULT_CACHE_BYTES):
        if capacity_bytes <= 0:
            raise ValueError("cache capacity must be positive")
        self.capacity_bytes = int(capacity_bytes)
        self.used_bytes = 0
        self._entries: OrderedDict[str, int] = OrderedDict()
        self.evictions = 0

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def touch(self, key: str) -> bool:
        if key not in self._entries:
            return False
        self._entries.move_to_end(key)
        return True

    def insert(self, key: str, size_bytes: int) -> bool:
        """Add an object, evicting LRU entries as needed.

        Objects larger than the whole cache are refused rather than
        wiping everything else out.
        """
        if size_bytes > self.capacity_bytes:
            return False
        if key in self._entries:
            self.used_bytes -= self._entries.pop(key)
        while self.used_bytes + size_bytes > self.capacity_bytes:
            _, evicted = self._entries.popitem(last=False)
            self.used_bytes -= evicted
            self.evictions += 1
        self._entries[key] = size_bytes
        self.used_bytes += size_bytes
        if self.used_bytes > self.capacity_bytes:
            raise InvariantViolation("cache exceeded its capacity")
        return True

    def invalidate(self, key: str) -> None:
        if key in self._entries:
            self.used_bytes -= self._entries.pop(key)

    def keys(self):
        return list(self._entries)


class DataStore:
    """The remote store shared by every host in the cluster."""

    def __init__(
        self,
        read_dist=None,
        write_dist=None,
        sync_dist=None,
        reference_bytes: int = DEFAULT_OBJECT_BYTES,
        cache_bytes: int = DEFAULT_CACHE_BYTES,
        cache_hit_ms_per_100mb: float = CACHE_HIT_MS_PER_100MB,
        put_failure_probability: float = 0.0,
    ):
        self.read_dist = read_dist or default_read_dist()
        self.write_dist = write_dist or default_write_dist()
        self.sync_dist = sync_dist or default_sync_dist()
        self.reference_bytes = int(reference_bytes)
        self.cache_bytes = int(cache_bytes)
        self.cache_hit_ms_per_100mb = float(cache_hit_ms_per_100mb)
        self.put_failure_probability = float(put_failure_probability)
        self.objects: dict[str, StoredObject] = {}
        self.caches: dict[int, NodeCache] = {}
        self.puts = 0
        self.gets = 0
        self.cache_hits = 0
        self.cache_misses = 0
        self.put_failures = 0
        self.bytes_written = 0
        self.bytes_read = 0

    # ------------------------------------------------------------ hosts

    def cache_for(self, host_id: int) -> NodeCache:
        cache = self.caches.get(host_id)
        if cache is None:
            cache = NodeCache(self.cache_bytes)
            self.caches[host_id] = cache
        return cache

    def drop_host(self, host_id: int) -> None:
        self.caches.pop(host_id, None)

    # ------------------------------------------------------- operations

    def _scale(self, size_bytes: int) -> float:
        return size_bytes / self.reference_bytes

    def put(self, key: str, size_bytes: int, from_host: int, rng) -> tuple[int, int]:
        """Write an object. Returns (latency_ms, new_version).

        Raises IOError when an injected failure fires; the caller owns
        retry policy.
        """
        if size_bytes <= 0:
            raise ValueError("object size must be positive")
        if self.put_failure_probability > 0.0 and rng.random() < self.put_failure_probability:
            self.put_failures += 1
            raise IOError(f"injected store failure writing {key}")
        latency = max(1, round(self.write_dist.sample(rng) * self._scale(size_bytes)))
        prior = self.objects.get(key)
        version = 1 if prior is None else prior.version + 1
        self.objects[key] = StoredObject(key, int(size_bytes), version)
        self.puts += 1
        self.bytes_written += size_bytes
        self.cache_for(from_host).insert(key, size_bytes)
        return latency, version

    def get(self, key: str, host_id: int, rng) -> tuple[int, bool]:
        """Read an object to a host. Returns (latency_ms, was_cache_hit)."""
        obj = self.objects.get(key)
        if obj is None:
            raise KeyError(f"object {key!r} is not in the store")
        self.gets += 1
        self.bytes_read += obj.size_bytes
        cache = self.cache_for(host_id)
        if cache.touch(key):
            self.cache_hits += 1
            latency = obj.size_bytes / (100 * MB) * self.cache_hit_ms_per_100mb
            return max(1, round(latency)), True
        self.cache_misses += 1
        latency = max(1, round(self.read_dist.sample(rng) * self._scale(obj.size_bytes)))
        cache.insert(key, obj.size_bytes)
        return latency, False

    def contains(self, key: str) -> bool:
        return key in self.objects

    def version_of(self, key: str) -> int:
        obj = self.objects.get(key)
        return 0 if obj is None else obj.version

    def sample_sync_latency(self, rng) -> int:
        return max(1, round(self.sync_dist.sample(rng)))

    # ------------------------------------------------------------ stats

    def stats(self) -> dict:
        lookups = self.cache_hits + self.cache_misses
        return {
            "objects": len(self.objects),
            "puts": self.puts,
            "gets": self.gets,
            "put_failures": self.put_failures,
            "bytes_written": self.bytes_written,
            "bytes_read": self.bytes_read,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "cache_hit_ratio": (self.cache_hits / lookups) if lookups else 0.0,
        }
