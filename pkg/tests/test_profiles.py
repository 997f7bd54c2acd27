import numpy as np
import pytest

from duckpac.errors import NetworkParseError, ValidationError
from duckpac.grid import bundled_network_path, load_network
from duckpac.profiles import (ProfileParams, generate_profiles, profiles_from_network,
                              read_profiles_csv, write_profiles_csv)
from feeders import four_bus


@pytest.fixture(scope="module")
def net():
    return load_network(bundled_network_path())


def test_same_seed_identical(net):
    a, b = generate_profiles(7, net), generate_profiles(7, net)
    for k in a.load_p:
        np.testing.assert_array_equal(a.load_p[k], b.load_p[k])
    for k in a.alpha_dr:
        np.testing.assert_array_equal(a.alpha_dr[k], b.alpha_dr[k])


def test_seed_changes_dr(net):
    a, b = generate_profiles(7, net), generate_profiles(8, net)
    assert any(not np.array_equal(a.alpha_dr[k], b.alpha_dr[k]) for k in a.alpha_dr)


def test_penetration(net):
    pen = generate_profiles(7, net).penetration()
    assert 0.376 <= pen <= 0.384


def test_zero_variance_keeps_shape(net):
    params = ProfileParams(time_shift_var=0.0, magnitude_var=0.0)
    prof = generate_profiles(3, net, params)
    first = next(iter(prof.alpha_dr.values()))
    for a in prof.alpha_dr.values():
        np.testing.assert_array_equal(a, first)


def test_alpha_in_unit_interval(net):
    for a in generate_profiles(11, net).alpha_dr.values():
        assert np.all((a >= 0) & (a <= 1))


def test_duck_shape(net):
    prof = generate_profiles(7, net)
    netload = prof.total_load() - prof.total_pv()
    solar_peak = int(np.argmax(prof.total_pv()))
    up_ramp = int(np.argmax(np.diff(netload))) + 1
    assert up_ramp > solar_peak
    # midday trough below the morning and evening levels
    assert netload[solar_peak] < netload[:solar_peak].max()
    assert netload[solar_peak] < netload[solar_peak:].max()


def test_penetration_without_pv():
    net = four_bus(pv=False)
    with pytest.raises(ValidationError):
        generate_profiles(1, net)


def test_csv_round_trip(tmp_path):
    net = four_bus()
    prof = profiles_from_network(net)
    path = tmp_path / "loads.csv"
    write_profiles_csv(prof, path)
    back = read_profiles_csv(path, net)
    for k in prof.load_p:
        np.testing.assert_array_equal(prof.load_p[k], back.load_p[k])
        np.testing.assert_array_equal(prof.load_q[k], back.load_q[k])


def test_csv_unknown_bus(tmp_path):
    path = tmp_path / "loads.csv"
    path.write_text("bus,phase,hour,p_kw,q_kvar\n9,a,0,1.0,0.0\n")
    with pytest.raises(ValidationError):
        read_profiles_csv(path, four_bus())


def test_csv_missing_column(tmp_path):
    path = tmp_path / "loads.csv"
    path.write_text("bus,phase,hour,p_kw\n2,a,0,1.0\n")
    with pytest.raises(NetworkParseError):
        read_profiles_csv(path, four_bus())
