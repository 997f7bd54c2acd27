import json

import numpy as np
import pytest

from duckpac.errors import NetworkParseError, ValidationError
from duckpac.grid import (bundled_network_path, impedance_blockmatrix, incidence_matrix,
                          load_network, network_from_dict, parse_phases)
from feeders import eight_bus, four_bus, two_bus, z


def _doc(**over):
    doc = {
        "horizon": 2,
        "buses": [{"id": 1, "phases": "a", "kind": "pcc"}, {"id": 2, "phases": "a"}],
        "lines": [{"from": 1, "to": 2, "phases": "a", "z_ohm": z(0.1, 0.2)}],
    }
    doc.update(over)
    return doc


@pytest.fixture(scope="module")
def bundled():
    return load_network(bundled_network_path())


def test_bundled_counts(bundled):
    assert len(bundled.buses) == 34
    assert len(bundled.lines) == 33
    s = bundled.summary()
    assert s["devices"]["battery"] == 3
    assert s["pcc"] == 1


def test_bundled_battery_sites(bundled):
    assert [b.id for b in bundled.buses if b.battery is not None] == [6, 19, 27]
    assert bundled.bus(26).kind == "commercial"
    assert bundled.bus(21).kind == "commercial"


def test_two_bus_is_radial():
    net = two_bus()
    assert len(net.lines) == len(net.buses) - 1 == 1


def test_phase_mismatch():
    doc = _doc(buses=[{"id": 1, "phases": "abc", "kind": "pcc"}, {"id": 2, "phases": "b"}],
               lines=[{"from": 1, "to": 2, "phases": "a", "z_ohm": z(0.1, 0.2)}])
    with pytest.raises(ValidationError, match="phase mismatch"):
        network_from_dict(doc)


def test_single_pcc_required():
    doc = _doc(buses=[{"id": 1, "phases": "a"}, {"id": 2, "phases": "a"}])
    with pytest.raises(ValidationError, match="pcc"):
        network_from_dict(doc)


def test_loop_rejected():
    doc = _doc(buses=[{"id": 1, "phases": "a", "kind": "pcc"}, {"id": 2, "phases": "a"},
                      {"id": 3, "phases": "a"}],
               lines=[{"from": 1, "to": 2, "phases": "a", "z_ohm": z(0.1, 0.2)},
                      {"from": 2, "to": 3, "phases": "a", "z_ohm": z(0.1, 0.2)},
                      {"from": 3, "to": 1, "phases": "a", "z_ohm": z(0.1, 0.2)}])
    with pytest.raises(ValidationError, match="radial"):
        network_from_dict(doc)


def test_battery_b0_outside_box():
    doc = _doc(devices=[{"bus": 2, "type": "battery", "p_sc_max_kw": 1, "p_sd_max_kw": 1,
                         "b_max_kwh": 10, "b_min_kwh": 2, "b0_kwh": 11}])
    with pytest.raises(ValidationError, match="b0"):
        network_from_dict(doc)


def test_pf_min_range():
    doc = _doc(devices=[{"bus": 2, "type": "pv", "capacity_kw": {"a": 5}, "pf_min": 0.5}])
    with pytest.raises(ValidationError, match="pf_min"):
        network_from_dict(doc)


def test_unknown_device_type():
    doc = _doc(devices=[{"bus": 2, "type": "windmill"}])
    with pytest.raises(NetworkParseError):
        network_from_dict(doc)


def test_asymmetric_impedance():
    zm = [[z(0.3, 0.6), z(0.1, 0.2)], [z(0.05, 0.2), z(0.3, 0.6)]]
    doc = _doc(buses=[{"id": 1, "phases": "ab", "kind": "pcc"}, {"id": 2, "phases": "ab"}],
               lines=[{"from": 1, "to": 2, "phases": "ab", "z_ohm": zm}])
    with pytest.raises(ValidationError, match="symmetric"):
        network_from_dict(doc)


def test_load_missing_file(tmp_path):
    with pytest.raises(NetworkParseError):
        load_network(tmp_path / "nope.json")


def test_load_bad_json(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(NetworkParseError):
        load_network(p)


def test_round_trip_file(tmp_path):
    p = tmp_path / "net.json"
    p.write_text(json.dumps(_doc()))
    assert len(load_network(p).buses) == 2


def test_parse_phases_order():
    assert parse_phases("ca") == ("a", "c")
    with pytest.raises(ValidationError):
        parse_phases("ad")
    with pytest.raises(ValidationError):
        parse_phases("aa")


def test_incidence_two_bus():
    A = incidence_matrix(two_bus()).toarray()
    np.testing.assert_array_equal(A, [[1.0, -1.0]])


def test_incidence_path():
    doc = _doc(buses=[{"id": 1, "phases": "a", "kind": "pcc"}, {"id": 2, "phases": "a"},
                      {"id": 3, "phases": "a"}],
               lines=[{"from": 1, "to": 2, "phases": "a", "z_ohm": z(0.1, 0.2)},
                      {"from": 2, "to": 3, "phases": "a", "z_ohm": z(0.1, 0.2)}])
    A = incidence_matrix(network_from_dict(doc)).toarray()
    np.testing.assert_array_equal(A, [[1, -1, 0], [0, 1, -1]])


def test_incidence_bundled_rows(bundled):
    A = incidence_matrix(bundled).tocsr()
    np.testing.assert_array_equal(np.asarray(A.sum(axis=1)).ravel(), 0.0)
    np.testing.assert_array_equal(np.diff(A.indptr), 2)


def test_impedance_single():
    Z = impedance_blockmatrix(two_bus(z_ohm=0.1 + 0.2j)).toarray()
    np.testing.assert_allclose(Z, [[0.1 + 0.2j]])


def test_impedance_blocks():
    net = four_bus()
    Z = impedance_blockmatrix(net).toarray()
    assert Z.shape == (3, 3)
    np.testing.assert_array_equal(Z - np.diag(np.diag(Z)), 0)


def test_impedance_three_phase_symmetric():
    Z = impedance_blockmatrix(eight_bus()).toarray()
    np.testing.assert_allclose(Z, Z.T)
