"""
In-memory cache of solved spectra

Thread-safe LRU keyed by mesh fingerprint, coefficient id, boundary
condition, eigenpair count and quadrature order, so that one run never
solves the same pencil twice.
"""
import hashlib
import json
import logging
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

from .config import config

logger = logging.getLogger(__name__)


@dataclass
class CacheEntry:
    """Cached spectrum with access bookkeeping"""
    data: Any
    created_at: float
    access_count: int = 0
    last_access: float = 0.0

    def access(self) -> Any:
        self.access_count += 1
        self.last_access = time.time()
        return self.data


class SpectrumCache:
    """Thread-safe cache with least-recently-used eviction"""

    def __init__(self, max_size: Optional[int] = None):
        """
        Initialize cache

        Args:
            max_size: Maximum number of spectra kept (defaults to config.spectrum_cache_size)
        """
        self.max_size = max_size if max_size is not None else config.spectrum_cache_size
        self._cache: Dict[str, CacheEntry] = {}
        self._lock = threading.RLock()
        self._stats = {'hits': 0, 'misses': 0, 'evictions': 0}

    @staticmethod
    def make_key(mesh_id: str, coeff_id: str, bc: str, count: int, quadrature_order: int) -> str:
        key_data = {
            'mesh': mesh_id,
            'coeffs': coeff_id,
            'bc': bc,
            'count': count,
            'order': quadrature_order,
        }
        key_str = json.dumps(key_data, sort_keys=True)
        return hashlib.md5(key_str.encode()).hexdigest()

    def get(self, key: str) -> Optional[Any]:
        with self._lock:
            entry = self._cache.get(key)
            if entry is None:
                self._stats['misses'] += 1
                return None
            self._stats['hits'] += 1
            return entry.access()

    def set(self, key: str, value: Any) -> None:
        with self._lock:
            if key not in self._cache and len(self._cache) >= self.max_size:
                self._evict_lru()
            self._cache[key] = CacheEntry(data=value, created_at=time.time())

    def get_or_compute(self, key: str, compute: Callable[[], Any]) -> Any:
        """Return the cached value or compute and store it"""
        cached = self.get(key)
        if cached is not None:
            logger.debug(f"Spectrum cache hit {key[:8]}")
            return cached
        value = compute()
        self.set(key, value)
        return value

    def _evict_lru(self) -> None:
        if not self._cache:
            return
        oldest = min(
            self._cache.items(),
            key=lambda item: item[1].last_access if item[1].last_access > 0 else item[1].created_at,
        )[0]
        del self._cache[oldest]
        self._stats['evictions'] += 1

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()
            self._stats = {'hits': 0, 'misses': 0, 'evictions': 0}

    def __len__(self) -> int:
        with self._lock:
            return len(self._cache)

    def stats(self) -> Dict[str, Any]:
        """Get cache statistics"""
        with self._lock:
            total_requests = self._stats['hits'] + self._stats['misses']
            hit_rate = self._stats['hits'] / total_requests if total_requests > 0 else 0
            return {
                **self._stats,
                'size': len(self._cache),
                'max_size': self.max_size,
                'hit_rate': hit_rate,
            }
