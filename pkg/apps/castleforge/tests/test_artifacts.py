from fractions import Fraction

import pytest
from py_common.schemas import ClopenRecord, Interval, PartitionArtifact, SimpleFunctionRecord
from pydantic import ValidationError

from castleforge.core.certificates import holds
from castleforge.core.dynsys import OdometerSystem, SubstitutionSystem, congruence
from castleforge.core.errors import ConfigError, DescriptorMismatchError, InputError
from castleforge.core.tiling import rokhlin_castle
from castleforge.models.artifacts import (
    build_system,
    castle_from_records,
    certificate,
    clopen_from_record,
    clopen_record,
    function_from_record,
    inputs_digest,
    load_artifact,
    load_system_config,
    parse_elements,
    rational,
    system_config,
    tower_records,
    write_artifact,
)

from conftest import Z, Z2, interval, ints


def test_parse_rank_one_elements():
    assert parse_elements(Z, "-1,1") == ints(-1, 1)
    assert parse_elements(Z, "0..3") == interval(0, 4)
    assert parse_elements(Z, "5; -2..-1, 5") == ints(-2, -1, 5)
    with pytest.raises(InputError):
        parse_elements(Z, "a..b")


def test_parse_boxes_in_higher_rank():
    assert len(parse_elements(Z2, "0..1 0..2")) == 6
    assert parse_elements(Z2, "1 0; 0,1").elements == ((0, 1), (1, 0))


def test_system_configs_load(configs):
    cfg = load_system_config(configs / "odometer2x3.toml")
    assert cfg.kind == "odometer"
    assert cfg.bases == [[2], [3]]
    assert isinstance(build_system(cfg), OdometerSystem)
    fib = build_system(load_system_config(configs / "fibonacci.toml"))
    assert isinstance(fib, SubstitutionSystem)
    assert system_config(fib).rules == "a->ab; b->a"


def test_broken_toml_is_a_config_error(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[system\nkind = 1\n")
    with pytest.raises(ConfigError):
        load_system_config(bad)
    with pytest.raises(ConfigError):
        load_system_config(tmp_path / "missing.toml")


@pytest.mark.parametrize(
    "body",
    [
        '[system]\nkind = "odometer"\nbases = [[2]]\ncolour = "red"\n',
        '[system]\nkind = "odometer"\nrules = "a->ab; b->a"\n',
        '[system]\nkind = "torus"\n',
        '[system]\nkind = "odometer"\nbases = [[2]]\n[extra]\n',
    ],
)
def test_schema_violations(tmp_path, body):
    path = tmp_path / "system.toml"
    path.write_text(body)
    with pytest.raises(ValidationError):
        load_system_config(path)


def test_clopen_records(base2):
    A = congruence(base2, 8, [3, 5, 6])
    assert clopen_from_record(base2, clopen_record(A)) == A
    with pytest.raises(InputError):
        clopen_from_record(base2, ClopenRecord(level=2, atoms=[4]))


def test_castle_records_check_the_group(base2):
    castle = rokhlin_castle(base2, 3)
    rebuilt = castle_from_records(base2, "Z", tower_records(castle))
    assert rebuilt.towers == castle.towers
    with pytest.raises(DescriptorMismatchError):
        castle_from_records(base2, "heisenberg", tower_records(castle))


def test_function_records_match_the_level(base2):
    with pytest.raises(InputError):
        function_from_record(
            base2, SimpleFunctionRecord(level=2, denominator=3, numerators=[0, 1, 2])
        )


def test_artifact_file_round_trip(tmp_path, base2):
    art = PartitionArtifact(
        system=system_config(base2),
        members=[clopen_record(congruence(base2, 2, [r])) for r in range(2)],
        certificate=certificate("divide", inputs_digest({"m": 2}), [holds("ok", True)]),
    )
    path = tmp_path / "partition.json"
    write_artifact(art, path)
    assert load_artifact(path) == art


def test_loading_rejects_unknown_kinds(tmp_path):
    path = tmp_path / "thing.json"
    path.write_text('{"kind": "sculpture"}')
    with pytest.raises(ValidationError):
        load_artifact(path)
    with pytest.raises(ConfigError):
        load_artifact(tmp_path / "absent.json")


def test_digest_ignores_key_order():
    assert inputs_digest({"a": 1, "b": [1, 2]}) == inputs_digest({"b": [1, 2], "a": 1})
    assert inputs_digest({"a": 1}) != inputs_digest({"a": 2})


def test_rationals():
    assert rational(" 2/6 ") == Fraction(1, 3)
    with pytest.raises(InputError):
        rational("1/0")
    with pytest.raises(ValidationError):
        Interval(lo="0.5", hi="1/1")
