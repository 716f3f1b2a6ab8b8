import math

import numpy as np
import pytest

from covmanifold.channel import ChannelParams
from covmanifold.errors import NoBasestations
from covmanifold.geometry import Segment3D, point_in_polygon, _crossing_parameter
from covmanifold.ingest import (
    Bounds,
    BasestationSpec,
    BuildingSpec,
    CityModel,
    SynthCityConfig,
    generate_city,
)
from covmanifold.simcore import (
    SimConfig,
    VerificationCounters,
    accelerated_coverage,
    blockage_vector,
    traditional_coverage,
    type1_blockage,
    type2_blockage,
)

CH = ChannelParams.from_db()


def square_building(x0, y0, side, height):
    ring = [
        (x0, y0),
        (x0, y0 + side),
        (x0 + side, y0 + side),
        (x0 + side, y0),
        (x0, y0),
    ]
    return BuildingSpec.from_ring([(float(a), float(b)) for a, b in ring], height)


def toy_city():
    return CityModel(
        (square_building(40, -10, 20, 10.0),),
        (BasestationSpec((100.0, 0.0), 20.0),),
        Bounds(-50, -50, 150, 50),
    )


def naive_link_blocked(city, mrp_xy, bs):
    """Oracle: all buildings, all edges, no prefilters."""
    seg = Segment3D((mrp_xy[0], mrp_xy[1], 0.0), (*bs.position_m, bs.height_m))
    d = (bs.position_m[0] - mrp_xy[0], bs.position_m[1] - mrp_xy[1])
    if d == (0.0, 0.0):
        return False
    for b in city.buildings:
        for e1, e2 in zip(b.ring[:-1], b.ring[1:]):
            t = _crossing_parameter((mrp_xy[0], mrp_xy[1]), d, e1, e2)
            if t is not None and 0.0 < t < 1.0 and bs.height_m * t < b.height_m:
                return True
    return False


class TestType1:
    def test_inside_building(self):
        assert type1_blockage(toy_city(), (50.0, 0.0))

    def test_empty_city(self):
        city = CityModel((), (BasestationSpec((0.0, 0.0)),), Bounds(-10, -10, 10, 10))
        assert not type1_blockage(city, (0.0, 0.0))

    def test_agrees_with_bruteforce(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 1000, 1000),
            building_density_per_km2=400.0,
            built_area_ratio=0.25,
            seed=13,
        )
        city = generate_city(cfg)
        rng = np.random.default_rng(1)
        hits = 0
        for _ in range(1000):
            mrp = tuple(rng.uniform(0, 1000, 2))
            want = any(point_in_polygon(mrp, b.ring) for b in city.buildings)
            got = type1_blockage(city, mrp)
            assert got == want
            hits += want
        assert hits > 50  # the city is dense enough for the test to bite

    def test_counters(self):
        counters = VerificationCounters()
        type1_blockage(toy_city(), (50.0, 0.0), counters)
        assert counters.type1_circle_tests == 1
        assert counters.type1_ray_casts == 1


class TestType2:
    def test_no_buildings(self):
        city = CityModel((), (BasestationSpec((10.0, 0.0)),), Bounds(-10, -10, 20, 10))
        assert not type2_blockage(city, (0.0, 0.0), city.basestations[0])

    def test_blocking_slab(self):
        city = toy_city()
        bs = city.basestations[0]
        assert type2_blockage(city, (0.0, 0.0), bs)  # 8 m link < 10 m roof

    def test_agrees_with_naive_on_random_links(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 800, 800),
            building_density_per_km2=350.0,
            built_area_ratio=0.2,
            rayleigh_scale=10.0,
            seed=29,
        )
        city = generate_city(cfg)
        rng = np.random.default_rng(2)
        blocked_count = 0
        for _ in range(2000):
            mrp = tuple(rng.uniform(0, 800, 2))
            if type1_blockage(city, mrp):
                continue
            bs = city.basestations[rng.integers(len(city.basestations))]
            got = type2_blockage(city, mrp, bs)
            want = naive_link_blocked(city, mrp, bs)
            assert got == want
            blocked_count += got
        assert blocked_count > 100


class TestAcceleratedCoverage:
    def test_inside_building_zero_without_fading(self):
        city = toy_city()
        prob, counters = accelerated_coverage(city, (50.0, 0.0), SimConfig(), CH)
        assert prob == 0.0
        assert counters.a2glpm_draws == 0
        assert counters.type2_building_prefilters == 0

    def test_no_basestations(self):
        city = CityModel((square_building(0, 0, 10, 5.0),), (), Bounds(-10, -10, 20, 20))
        with pytest.raises(NoBasestations):
            accelerated_coverage(city, (15.0, 15.0), SimConfig(), CH)

    def test_huge_cutoff_no_statistical_draws(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=5)
        city = generate_city(cfg)
        sim = SimConfig(d_th_m=1e9, n_iter=100, seed=3)
        mrp = (250.0, 250.0)
        if type1_blockage(city, mrp):
            mrp = (260.0, 270.0)
        _, counters = accelerated_coverage(city, mrp, sim, CH)
        assert counters.a2glpm_draws == 0

    def test_matches_traditional_with_infinite_cutoff(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=6)
        city = generate_city(cfg)
        rng = np.random.default_rng(3)
        for _ in range(10):
            mrp = tuple(rng.uniform(0, 500, 2))
            sim = SimConfig(d_th_m=math.inf, n_iter=500, seed=11)
            a, _ = accelerated_coverage(city, mrp, sim, CH)
            t = traditional_coverage(city, mrp, 500, CH, seed=11)
            assert a == t

    def test_blockage_vector_oracle_equivalence(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 600, 600),
            building_density_per_km2=300.0,
            built_area_ratio=0.2,
            seed=31,
        )
        city = generate_city(cfg)
        rng = np.random.default_rng(4)
        for _ in range(40):
            mrp = tuple(rng.uniform(0, 600, 2))
            if type1_blockage(city, mrp):
                continue
            sim = SimConfig(d_th_m=math.inf, n_iter=1, seed=1)
            got, _ = blockage_vector(city, mrp, sim, CH)
            want = [naive_link_blocked(city, mrp, bs) for bs in city.basestations]
            assert got.tolist() == want

    def test_zero_cutoff_statistical_everywhere(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=8)
        city = generate_city(cfg)
        mrp = (250.0, 250.0)
        if type1_blockage(city, mrp):
            mrp = (222.0, 235.0)
        sim = SimConfig(d_th_m=0.0, n_iter=100, seed=5)
        _, counters = accelerated_coverage(city, mrp, sim, CH)
        assert counters.a2glpm_draws == len(city.basestations)
        assert counters.type2_building_prefilters == 0

    def test_deterministic(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=9)
        city = generate_city(cfg)
        sim = SimConfig(d_th_m=100.0, n_iter=400, seed=21)
        a, _ = accelerated_coverage(city, (250.0, 250.0), sim, CH)
        b, _ = accelerated_coverage(city, (250.0, 250.0), sim, CH)
        assert a == b

    def test_single_close_bs_high_coverage(self):
        city = CityModel(
            (square_building(400, 400, 10, 3.0),),
            (BasestationSpec((30.0, 0.0), 20.0),),
            Bounds(-50, -50, 500, 500),
        )
        p = traditional_coverage(city, (0.0, 0.0), 2000, CH, seed=2)
        assert p >= 0.99

    def test_traditional_inside_building_zero(self):
        assert traditional_coverage(toy_city(), (50.0, 0.0), 100, CH, seed=1) == 0.0
