import json
import math

import numpy as np
import pytest
from scipy import stats as sstats

from covmanifold.errors import EmptyCity, InfeasibleDensity, MalformedRing, NegativeHeight
from covmanifold.geometry import polygon_area
from covmanifold.ingest import (
    Bounds,
    BuildingSpec,
    BasestationSpec,
    CityModel,
    LoadDefaults,
    SynthCityConfig,
    generate_city,
    load_city,
    resample_heights,
    write_city,
)

SQUARE_20M = [[0.0, 0.0], [0.0, 20.0], [20.0, 20.0], [20.0, 0.0], [0.0, 0.0]]


def write_inputs(tmp_path, buildings, bs_rows, header="x,y,height"):
    bpath = tmp_path / "buildings.json"
    spath = tmp_path / "bs.csv"
    bpath.write_text(json.dumps(buildings))
    spath.write_text(header + "\n" + "\n".join(bs_rows) + ("\n" if bs_rows else ""))
    return bpath, spath


class TestLoadCity:
    def test_single_square_building(self, tmp_path):
        bpath, spath = write_inputs(
            tmp_path, [{"ring": SQUARE_20M, "height": 12.0}], ["50.0,50.0,20.0"]
        )
        city = load_city(bpath, spath)
        assert len(city.buildings) == 1 and len(city.basestations) == 1
        assert city.buildings[0].area_m2 == pytest.approx(400.0)
        assert city.buildings[0].height_m == 12.0
        assert city.basestations[0].height_m == 20.0

    def test_ccw_ring_reoriented(self, tmp_path):
        ccw = SQUARE_20M[::-1]
        bpath, spath = write_inputs(tmp_path, [{"ring": ccw, "height": 5}], ["1,1"] , "x,y")
        city = load_city(bpath, spath)
        b = city.buildings[0]
        assert b.area_m2 == pytest.approx(400.0)
        # clockwise: negative signed shoelace sum
        s = sum(
            x1 * y2 - x2 * y1 for (x1, y1), (x2, y2) in zip(b.ring[:-1], b.ring[1:])
        )
        assert s < 0

    def test_two_distinct_vertices_rejected(self, tmp_path):
        ring = [[0, 0], [1, 0], [0, 0]]
        bpath, spath = write_inputs(tmp_path, [{"ring": ring, "height": 3}], ["1,1,20"])
        with pytest.raises(MalformedRing):
            load_city(bpath, spath)

    def test_self_intersecting_rejected(self, tmp_path):
        bowtie = [[0, 0], [2, 2], [2, 0], [0, 2], [0, 0]]
        bpath, spath = write_inputs(tmp_path, [{"ring": bowtie, "height": 3}], ["1,1,20"])
        with pytest.raises(MalformedRing):
            load_city(bpath, spath)

    def test_negative_height_rejected(self, tmp_path):
        bpath, spath = write_inputs(
            tmp_path, [{"ring": SQUARE_20M, "height": -1}], ["1,1,20"]
        )
        with pytest.raises(NegativeHeight):
            load_city(bpath, spath)

    def test_autoclose_within_tolerance(self, tmp_path):
        ring = [[0, 0], [0, 20], [20, 20], [20, 0], [1e-7, 0]]
        bpath, spath = write_inputs(tmp_path, [{"ring": ring, "height": 3}], ["1,1,20"])
        city = load_city(bpath, spath)
        assert city.buildings[0].ring[0] == city.buildings[0].ring[-1]

    def test_open_ring_rejected(self, tmp_path):
        ring = [[0, 0], [0, 20], [20, 20], [20, 0]]
        bpath, spath = write_inputs(tmp_path, [{"ring": ring, "height": 3}], ["1,1,20"])
        with pytest.raises(MalformedRing):
            load_city(bpath, spath)

    def test_missing_bs_height_defaults(self, tmp_path):
        bpath, spath = write_inputs(
            tmp_path, [{"ring": SQUARE_20M, "height": 3}], ["5,5"], header="x,y"
        )
        city = load_city(bpath, spath, LoadDefaults(bs_height_m=25.0))
        assert city.basestations[0].height_m == 25.0

    def test_empty_city_rejected(self, tmp_path):
        bpath, spath = write_inputs(tmp_path, [], [])
        with pytest.raises(EmptyCity):
            load_city(bpath, spath)

    def test_missing_building_height_sampled(self, tmp_path):
        bpath, spath = write_inputs(tmp_path, [{"ring": SQUARE_20M}], ["5,5,20"])
        c1 = load_city(bpath, spath, LoadDefaults(seed=1))
        c2 = load_city(bpath, spath, LoadDefaults(seed=1))
        assert c1.buildings[0].height_m == c2.buildings[0].height_m > 0

    def test_round_trip_exact(self, tmp_path):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=3)
        city = generate_city(cfg)
        b1, s1 = tmp_path / "b1.json", tmp_path / "s1.csv"
        write_city(city, b1, s1)
        loaded = load_city(b1, s1, LoadDefaults(bounds=city.bounds))
        assert len(loaded.buildings) == len(city.buildings)
        for old, new in zip(city.buildings, loaded.buildings):
            assert old.ring == new.ring
            assert old.height_m == new.height_m
        b2, s2 = tmp_path / "b2.json", tmp_path / "s2.csv"
        write_city(loaded, b2, s2)
        assert b1.read_bytes() == b2.read_bytes()
        assert s1.read_bytes() == s2.read_bytes()


class TestDerivedGeometry:
    def test_area_matches_recomputation(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 800, 800), seed=9)
        city = generate_city(cfg)
        assert len(city.buildings) > 10
        for b in city.buildings:
            assert polygon_area(b.ring) == pytest.approx(b.area_m2, rel=1e-12)
            for x, y in b.ring:
                d = math.hypot(x - b.center_m[0], y - b.center_m[1])
                assert d <= b.radius_m * (1 + 1e-9) + 1e-12


class TestGenerateCity:
    def test_zero_density_empty(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 1000, 1000), building_density_per_km2=0.0, seed=1
        )
        city = generate_city(cfg)
        assert len(city.buildings) == 0 and len(city.basestations) > 0

    def test_same_seed_identical(self, tmp_path):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 1000, 1000), seed=42)
        a, b = generate_city(cfg), generate_city(cfg)
        pa, sa = tmp_path / "a.json", tmp_path / "a.csv"
        pb, sb = tmp_path / "b.json", tmp_path / "b.csv"
        write_city(a, pa, sa)
        write_city(b, pb, sb)
        assert pa.read_bytes() == pb.read_bytes()
        assert sa.read_bytes() == sb.read_bytes()

    def test_poisson_count_statistics(self):
        # oracle: total count over 50 seeds ~ Poisson(50 * 100)
        counts = []
        for seed in range(50):
            cfg = SynthCityConfig(
                bounds=Bounds(0, 0, 1000, 1000),
                building_density_per_km2=100.0,
                built_area_ratio=0.08,
                seed=seed,
            )
            counts.append(len(generate_city(cfg).buildings))
        lo, hi = sstats.poisson.interval(0.99, 50 * 100)
        assert lo <= sum(counts) <= hi

    def test_built_area_ratio_realized(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 1000, 1000),
            building_density_per_km2=300.0,
            built_area_ratio=0.2,
            seed=5,
        )
        city = generate_city(cfg)
        ratio = city.building_areas.sum() / cfg.bounds.area_m2
        assert ratio == pytest.approx(0.2, rel=0.1)

    def test_no_overlaps(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 500, 500),
            building_density_per_km2=400.0,
            built_area_ratio=0.25,
            seed=8,
        )
        city = generate_city(cfg)
        boxes = []
        for b in city.buildings:
            xs = [p[0] for p in b.ring]
            ys = [p[1] for p in b.ring]
            boxes.append((min(xs), min(ys), max(xs), max(ys)))
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                a, c = boxes[i], boxes[j]
                overlap = a[0] < c[2] and a[2] > c[0] and a[1] < c[3] and a[3] > c[1]
                assert not overlap

    def test_infeasible_density_raises(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 200, 200),
            building_density_per_km2=2000.0,
            built_area_ratio=0.9,
            max_place_tries=20,
            seed=2,
        )
        with pytest.raises(InfeasibleDensity):
            generate_city(cfg)

    def test_heights_rayleigh_ks(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 8000, 8000),
            building_density_per_km2=160.0,
            built_area_ratio=0.05,
            rayleigh_scale=12.0,
            seed=17,
        )
        city = generate_city(cfg)
        h = city.building_heights
        assert len(h) >= 10000
        res = sstats.kstest(h, "rayleigh", args=(0, 12.0))
        assert res.pvalue > 0.01


class TestResampleHeights:
    def test_mean_matches_rayleigh_identity(self):
        cfg = SynthCityConfig(
            bounds=Bounds(0, 0, 8000, 8000),
            building_density_per_km2=160.0,
            built_area_ratio=0.05,
            seed=21,
        )
        city = generate_city(cfg)
        assert len(city.buildings) >= 10000
        out = resample_heights(city, 9.0, seed=4)
        assert out.building_heights.mean() == pytest.approx(
            9.0 * math.sqrt(math.pi / 2), rel=0.02
        )

    def test_footprints_shared_original_untouched(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=3)
        city = generate_city(cfg)
        before = [b.height_m for b in city.buildings]
        out = resample_heights(city, 5.0, seed=1)
        assert [b.height_m for b in city.buildings] == before
        assert [b.ring for b in out.buildings] == [b.ring for b in city.buildings]

    def test_same_seed_identical(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=3)
        city = generate_city(cfg)
        a = resample_heights(city, 5.0, seed=9)
        b = resample_heights(city, 5.0, seed=9)
        assert [x.height_m for x in a.buildings] == [x.height_m for x in b.buildings]

    def test_tiny_scale_tiny_heights(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=3)
        city = generate_city(cfg)
        out = resample_heights(city, 1e-9, seed=0)
        assert out.building_heights.max() < 1e-7

    def test_invalid_scale(self):
        cfg = SynthCityConfig(bounds=Bounds(0, 0, 500, 500), seed=3)
        city = generate_city(cfg)
        with pytest.raises(ValueError):
            resample_heights(city, 0.0, seed=0)
