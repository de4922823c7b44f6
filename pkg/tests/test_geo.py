import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dyadnet.errors import DomainError
from dyadnet.geo import (
    DistanceBinScheme,
    EARTH_RADIUS_KM,
    bin_distance,
    bin_indicators,
    haversine_km,
)

lat_st = st.floats(min_value=-90.0, max_value=90.0, allow_nan=False)
lon_st = st.floats(min_value=-179.999, max_value=180.0, allow_nan=False)
point_st = st.tuples(lat_st, lon_st)


class TestHaversine:
    def test_identity(self):
        assert haversine_km(0.0, 0.0, 0.0, 0.0) == 0.0

    def test_antipodal_half_circumference(self):
        # Forced analytically by the chosen sphere radius.
        assert haversine_km(0.0, 0.0, 0.0, 180.0) == pytest.approx(math.pi * EARTH_RADIUS_KM, rel=1e-12)

    def test_berlin_paris_against_independent_oracle(self):
        # Oracle: spherical law of cosines, written independently here.
        phi1, lam1 = math.radians(52.5200), math.radians(13.4050)
        phi2, lam2 = math.radians(48.8566), math.radians(2.3522)
        oracle = EARTH_RADIUS_KM * math.acos(
            math.sin(phi1) * math.sin(phi2) + math.cos(phi1) * math.cos(phi2) * math.cos(lam2 - lam1)
        )
        got = haversine_km(52.5200, 13.4050, 48.8566, 2.3522)
        assert got == pytest.approx(oracle, rel=1e-9)
        # Frozen external great-circle figure, 0.5% tolerance.
        assert got == pytest.approx(877.46, rel=0.005)

    def test_out_of_range_coordinates(self):
        with pytest.raises(DomainError):
            haversine_km(91.0, 0.0, 0.0, 0.0)
        with pytest.raises(DomainError):
            haversine_km(0.0, -180.0, 0.0, 0.0)
        with pytest.raises(DomainError):
            haversine_km(0.0, 200.0, 0.0, 0.0)

    @given(a=point_st, b=point_st)
    @settings(max_examples=200)
    def test_symmetry_is_bit_identical(self, a, b):
        assert haversine_km(a[0], a[1], b[0], b[1]) == haversine_km(b[0], b[1], a[0], a[1])

    @given(a=point_st, b=point_st)
    @settings(max_examples=200)
    def test_bounds(self, a, b):
        d = haversine_km(a[0], a[1], b[0], b[1])
        assert 0.0 <= d <= math.pi * EARTH_RADIUS_KM + 1e-9

    @given(a=point_st, b=point_st, c=point_st)
    @settings(max_examples=200)
    def test_triangle_inequality(self, a, b, c):
        ab = haversine_km(a[0], a[1], b[0], b[1])
        bc = haversine_km(b[0], b[1], c[0], c[1])
        ac = haversine_km(a[0], a[1], c[0], c[1])
        assert ab + bc >= ac - 1e-9

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(0)
        lat1, lat2 = rng.uniform(-90, 90, 50), rng.uniform(-90, 90, 50)
        lon1, lon2 = rng.uniform(-179, 180, 50), rng.uniform(-179, 180, 50)
        vec = haversine_km(lat1, lon1, lat2, lon2)
        for k in range(50):
            assert vec[k] == haversine_km(lat1[k], lon1[k], lat2[k], lon2[k])


class TestBinScheme:
    def test_default_scheme(self):
        s = DistanceBinScheme()
        assert s.n_bins == 8
        assert s.edges_km == (5.0, 10.0, 50.0, 100.0, 500.0, 1000.0, 3000.0)
        assert len(s.indicator_names) == 7

    def test_validation(self):
        with pytest.raises(DomainError):
            DistanceBinScheme((10.0, 5.0))
        with pytest.raises(DomainError):
            DistanceBinScheme((-1.0, 5.0))
        with pytest.raises(DomainError):
            DistanceBinScheme(())

    def test_bin_distance_examples(self):
        s = DistanceBinScheme()
        assert bin_distance(3.0, s) == 0
        assert bin_distance(5.0, s) == 1  # left-closed boundary
        assert bin_distance(20000.0, s) == 7

    def test_bin_distance_negative(self):
        with pytest.raises(DomainError):
            bin_distance(-0.1, DistanceBinScheme())

    @given(st.lists(st.floats(min_value=0, max_value=25000, allow_nan=False), min_size=2, max_size=30))
    @settings(max_examples=100)
    def test_bin_distance_monotone(self, ds):
        s = DistanceBinScheme()
        ds = sorted(ds)
        idx = [bin_distance(d, s) for d in ds]
        assert all(b >= a for a, b in zip(idx, idx[1:]))

    def test_bin_indicators(self):
        s = DistanceBinScheme()
        assert np.array_equal(bin_indicators(0, s), np.zeros(7))
        v = bin_indicators(3, s)
        assert v[2] == 1.0 and v.sum() == 1.0
        for k in range(s.n_bins):
            assert bin_indicators(k, s).sum() in (0.0, 1.0)

    def test_bin_indicators_bad_index(self):
        with pytest.raises(DomainError):
            bin_indicators(8, DistanceBinScheme())
