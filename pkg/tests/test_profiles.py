from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from voltctl.errors import ParseError
from voltctl.feeder import LoadPoint
from voltctl.profiles import (Profile, ProfileKind, ProfileLibrary, assign_profiles, build_injection,
                              dump_profiles, generate_profiles, load_profiles)


def pv_profiles(profiles):
    return [p for p in profiles if p.kind == ProfileKind.PV]


def test_ids_and_kinds():
    profiles = generate_profiles(1, 3, 2)
    assert [p.id for p in profiles] == ["load-1", "load-2", "load-3", "pv-1", "pv-2"]
    assert [p.kind for p in profiles] == [ProfileKind.LOAD] * 3 + [ProfileKind.PV] * 2


def test_same_seed_same_profiles():
    a = generate_profiles(42, 5, 6)
    b = generate_profiles(42, 5, 6)
    assert all(np.array_equal(x.values, y.values) for x, y in zip(a, b))
    c = generate_profiles(43, 5, 6)
    assert not all(np.array_equal(x.values, y.values) for x, y in zip(a, c))


@pytest.mark.parametrize("month", [1, 6, 8, 12])
def test_values_are_normalised(month):
    for p in generate_profiles(5, 5, 6, month):
        assert p.values.min() >= 0.0
        assert p.values.max() == pytest.approx(1.0)


def test_pv_is_dark_at_midnight():
    for month in (6, 12):
        for p in pv_profiles(generate_profiles(9, 1, 6, month)):
            assert p.at(0) == 0.0
            assert p.at(23) == 0.0


def test_pv_peaks_around_noon():
    hours = [p.peak_hour for seed in range(100) for p in pv_profiles(generate_profiles(seed, 1, 1))]
    assert set(hours) <= {11.0, 12.0, 13.0}


def test_summer_days_are_longer():
    summer = sum(p.values.sum() for p in pv_profiles(generate_profiles(3, 1, 6, 6)))
    winter = sum(p.values.sum() for p in pv_profiles(generate_profiles(3, 1, 6, 12)))
    assert summer > winter


def test_minutely_resolution():
    p = pv_profiles(generate_profiles(2, 1, 1, resolution="minutely"))[0]
    assert len(p.values) == 1440
    assert p.resolution == "minutely"
    assert p.at(12.5) == p.values[750]
    assert p.at(24.0) == p.values[0]


def test_profile_checks():
    with pytest.raises(ValueError):
        Profile("x", ProfileKind.LOAD, np.ones(10))
    with pytest.raises(ValueError):
        Profile("x", ProfileKind.LOAD, np.full(24, 1.5))
    with pytest.raises(ValueError):
        generate_profiles(1, 0, 1)


def test_library_months_are_independent_streams():
    lib = ProfileLibrary.generate(11, [5, 8])
    alone = generate_profiles(11, 5, 6, 8)
    assert all(np.array_equal(lib.get(8, p.id).values, p.values) for p in alone)
    assert lib.has("pv-6")
    assert not lib.has("pv-7")
    with pytest.raises(KeyError):
        lib.get(3, "pv-1")


def test_library_ids_sort_numerically():
    lib = ProfileLibrary.generate(1, [8], count_load=11, count_pv=2)
    assert lib.ids(ProfileKind.LOAD)[-2:] == ["load-10", "load-11"]
    assert lib.ids(ProfileKind.PV) == ["pv-1", "pv-2"]


def test_assignment_is_seeded(desk30):
    lib = ProfileLibrary.generate(1, [8])
    first = assign_profiles(desk30, lib, 5)
    assert first == assign_profiles(desk30, lib, 5)
    assert set(first) == {e.id for e in desk30.loads} | {e.id for e in desk30.pvs}
    assert all(first[load.id].startswith("load-") for load in desk30.loads)
    assert all(first[pv.id].startswith("pv-") for pv in desk30.pvs)


def test_assignment_is_uniform(desk30):
    crowd = replace(desk30, loads=tuple(LoadPoint(f"L{k}", "t1", ("A",), 1.0) for k in range(1000)))
    profiles = generate_profiles(1, 5, 1)
    ids = [p.id for p in profiles if p.kind == ProfileKind.LOAD]
    pvalues = []
    for seed in range(5):
        assignment = assign_profiles(crowd, profiles, seed)
        counts = [sum(assignment[load.id] == pid for load in crowd.loads) for pid in ids]
        pvalues.append(stats.chisquare(counts).pvalue)
    assert sorted(pvalues)[2] > 0.01


def test_single_profile_is_used_everywhere(desk30):
    assignment = assign_profiles(desk30, generate_profiles(4, 1, 1), 0)
    assert set(assignment.values()) == {"load-1", "pv-1"}


def test_injection_follows_profiles(desk30):
    lib = ProfileLibrary.generate(2, [8])
    assignment = assign_profiles(desk30, lib, 2)
    inj = build_injection(desk30, lib, assignment, 8, 12, load_scale=0.5)
    for load, kw in zip(desk30.loads, inj.load_kw):
        assert kw == pytest.approx(load.kw_peak * lib.get(8, assignment[load.id]).at(12) * 0.5)
    assert np.all(inj.pv_kvar == 0)
    assert np.all(inj.load_kvar > 0)
    night = build_injection(desk30, lib, assignment, 8, 0)
    assert np.all(night.pv_kw == 0)


def test_injection_falls_back_to_element_profile(desk30):
    lib = ProfileLibrary.generate(2, [8])
    inj = build_injection(desk30, lib, {}, 8, 12)
    load = desk30.loads[0]
    assert inj.load_kw[0] == pytest.approx(load.kw_peak * lib.get(8, load.profile_id).at(12))


def test_file_round_trip(tmp_path):
    lib = ProfileLibrary.generate(8, [7, 8], count_load=2, count_pv=2)
    path = tmp_path / "profiles.json"
    dump_profiles(lib, path, seed=8)
    again = load_profiles(path)
    assert sorted(again.months) == [7, 8]
    for month, profiles in lib.months.items():
        for pid, p in profiles.items():
            assert np.array_equal(again.get(month, pid).values, p.values)
            assert again.get(month, pid).kind == p.kind


def test_bad_profile_file(tmp_path):
    path = tmp_path / "profiles.json"
    path.write_text('{"months": {"8": {"pv-1": [0.1, 0.2,]}}}')
    with pytest.raises(ParseError) as info:
        load_profiles(path)
    assert info.value.line == 1
    path.write_text('{"seed": 1}')
    with pytest.raises(ParseError) as info:
        load_profiles(path)
    assert info.value.key == "months"
