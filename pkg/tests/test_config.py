import json

import pytest

from locrel.config import Numerics, SystemConfig, config_from_dict, dbm_to_watt, load_config
from locrel.errors import ParseError, ValidationError


def test_empty_document_gives_defaults(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{}")
    c = load_config(p)
    assert c.bs_positions == (0.0, 1000.0)
    assert c.tx_power_dbm == 10.0 and c.noise_power_dbm == -70.0
    assert c.bandwidth_hz == 10e6 and c.carrier_freq_hz == 2.1e9
    assert c.n_subcarriers == 600 and c.excess_delay_s == 50e-9 and c.pdp_rho == 2.0
    assert c.tx_power == pytest.approx(1e-2, rel=1e-15)
    assert c.noise_power == pytest.approx(1e-10, rel=1e-15)


def test_derived_quantities():
    c = SystemConfig()
    assert c.subcarrier_spacing == pytest.approx(10e6 / 600)
    assert c.wavelength == pytest.approx(299_792_458.0 / 2.1e9)
    assert dbm_to_watt(30.0) == pytest.approx(1.0)


@pytest.mark.parametrize("bad", [
    {"bandwidth_hz": -1.0},
    {"n_subcarriers": 0},
    {"pdp_rho": 0.0},
    {"excess_delay_s": 0.0},
    {"bs_positions": [5.0, 5.0]},
    {"numerics": {"map_step": 0}},
    {"numerics": {"eps": 1.5}},
])
def test_invalid_values_rejected(bad):
    with pytest.raises(ValidationError):
        config_from_dict(bad)


def test_unknown_keys_rejected():
    with pytest.raises(ValidationError, match="unknown"):
        config_from_dict({"bandwith_hz": 1e6})
    with pytest.raises(ValidationError, match="unknown"):
        config_from_dict({"numerics": {"sed": 1}})


def test_parse_errors(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ParseError):
        load_config(p)
    with pytest.raises(ParseError):
        load_config(tmp_path / "missing.json")
    with pytest.raises(ParseError):
        config_from_dict([1, 2])


def test_round_trip_is_identity(tmp_path):
    c = SystemConfig().replace(tx_power_dbm=13.0, **{"numerics.map_eps_levels": (1e-3, 1e-2)})
    p = tmp_path / "c.json"
    p.write_text(c.to_json())
    c2 = load_config(p)
    assert c2 == c
    assert c2.hash() == c.hash()
    assert c2.to_json() == c.to_json()


def test_hash_changes_with_content():
    assert SystemConfig().hash() != SystemConfig(pdp_rho=3.0).hash()
    assert SystemConfig().hash() == SystemConfig().hash()


def test_replace_numerics():
    c = SystemConfig().replace(**{"numerics.seed": 7})
    assert c.numerics.seed == 7 and isinstance(c.numerics, Numerics)
    assert json.loads(c.to_json())["numerics"]["seed"] == 7
