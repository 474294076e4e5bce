"""
Tests for the spectrum cache
"""
import pytest

from src.spectral_ordering.spectrum_cache import SpectrumCache


class TestSpectrumCache:
    """LRU cache of solved spectra"""

    @pytest.fixture
    def cache(self):
        return SpectrumCache(max_size=2)

    def test_key_depends_on_every_part(self):
        base = SpectrumCache.make_key("mesh", "coeffs", "dirichlet", 6, 2)
        assert base == SpectrumCache.make_key("mesh", "coeffs", "dirichlet", 6, 2)
        assert base != SpectrumCache.make_key("mesh", "coeffs", "neumann", 6, 2)
        assert base != SpectrumCache.make_key("mesh", "coeffs", "dirichlet", 7, 2)
        assert base != SpectrumCache.make_key("mesh", "coeffs", "dirichlet", 6, 3)
        assert base != SpectrumCache.make_key("other", "coeffs", "dirichlet", 6, 2)

    def test_get_or_compute_runs_once(self, cache):
        calls = []

        def compute():
            calls.append(1)
            return "spectrum"

        assert cache.get_or_compute("k", compute) == "spectrum"
        assert cache.get_or_compute("k", compute) == "spectrum"
        assert len(calls) == 1
        stats = cache.stats()
        assert stats["hits"] == 1
        assert stats["misses"] == 1
        assert stats["hit_rate"] == pytest.approx(0.5)

    def test_eviction(self, cache):
        for key in ("a", "b", "c"):
            cache.set(key, key.upper())
        assert len(cache) == 2
        assert cache.stats()["evictions"] == 1
        assert cache.get("c") == "C"

    def test_clear(self, cache):
        cache.set("a", 1)
        cache.get("a")
        cache.clear()
        assert len(cache) == 0
        assert cache.stats() == {"hits": 0, "misses": 0, "evictions": 0, "size": 0, "max_size": 2,
                                 "hit_rate": 0}
