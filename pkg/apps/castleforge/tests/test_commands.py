import json

import pytest
from py_common.schemas import (
    CastleArtifact,
    DensityArtifact,
    GammaArtifact,
    PartitionArtifact,
    RotationArtifact,
    VerificationArtifact,
    WitnessArtifact,
)

from castleforge.api.commands import RunConfig, parse_clopen, run
from castleforge.core.dynsys import congruence, cylinder, whole
from castleforge.core.errors import InputError
from castleforge.main import main
from castleforge.models.artifacts import load_artifact


@pytest.fixture
def odometer2(configs):
    return str(configs / "odometer2.toml")


@pytest.fixture
def castle_file(tmp_path, odometer2):
    out = tmp_path / "castle.json"
    argv = ["castle", "--system", odometer2, "--K=-1,1", "--delta", "1/5", "--eps", "1/5"]
    code = main([*argv, "--out", str(out)])
    assert code == 0
    return out


def verify(*paths, out=None):
    argv = ["verify", *map(str, paths)]
    if out is not None:
        argv += ["--out", str(out)]
    return main(argv)


def hard_failures(path):
    art = load_artifact(path)
    assert isinstance(art, VerificationArtifact)
    return [
        c
        for r in art.results
        for c in r.certificate.claims
        if c.hard and not c.passed
    ]


# --- clopen syntax ---------------------------------------------------------------


def test_clopen_syntax(base2, fib):
    assert parse_clopen(base2, "all") == whole(base2)
    assert parse_clopen(base2, "empty").empty
    assert parse_clopen(base2, "mod 8: 3, 5,6") == congruence(base2, 8, [3, 5, 6])
    assert parse_clopen(base2, "3:0") == congruence(base2, 8, [0])
    assert parse_clopen(fib, "word:ab@-1") == cylinder(fib, "ab", -1)
    with pytest.raises(InputError):
        parse_clopen(fib, "mod 2:0")
    with pytest.raises(InputError):
        parse_clopen(base2, "word:a")
    with pytest.raises(InputError):
        parse_clopen(base2, "nonsense")


# --- castles -------------------------------------------------------------------------


def test_castle_then_verify(tmp_path, castle_file):
    art = load_artifact(castle_file)
    assert isinstance(art, CastleArtifact)
    assert art.provenance["level"] == 9
    assert art.certificate.passed
    report = tmp_path / "verify.json"
    assert verify(castle_file, out=report) == 0
    assert hard_failures(report) == []


def test_tampered_castle_is_rejected(tmp_path, castle_file):
    data = json.loads(castle_file.read_text())
    atoms = data["towers"][0]["base"]["atoms"]
    data["towers"][0]["base"]["atoms"] = sorted([*atoms, 1])
    forged = tmp_path / "forged.json"
    forged.write_text(json.dumps(data))
    report = tmp_path / "verify.json"
    assert verify(forged, out=report) == 1
    failed = {c.name: c for c in hard_failures(report)}
    assert "levels_disjoint" in failed
    assert "tower 0" in failed["levels_disjoint"].detail


def test_match_then_verify(tmp_path, castle_file):
    matched = tmp_path / "matched.json"
    code = main(
        [
            "match",
            "--castle",
            str(castle_file),
            "--window=-160..160",
            "--reserve",
            "1/5",
            "--out",
            str(matched),
        ]
    )
    assert code == 0
    art = load_artifact(matched)
    assert isinstance(art, CastleArtifact)
    assert art.provenance["matched"] == 38
    assert verify(matched) == 0


def test_match_defaults_the_reserve(tmp_path, castle_file):
    matched = tmp_path / "matched.json"
    argv = ["match", "--castle", str(castle_file), "--window=-160..160"]
    assert main([*argv, "--out", str(matched)]) == 0
    art = load_artifact(matched)
    assert isinstance(art, CastleArtifact)
    assert art.provenance["reserve_fraction"] == "38/237"
    assert verify(matched) == 0


def test_thin_reserve_exits_three(tmp_path, castle_file):
    argv = ["match", "--castle", str(castle_file), "--window=-160..160", "--reserve", "1/10"]
    assert main([*argv, "--out", str(tmp_path / "matched.json")]) == 3


def test_rokhlin_castle(tmp_path, odometer2):
    out = tmp_path / "rokhlin.json"
    assert main(["castle", "--system", odometer2, "--rokhlin", "4", "--out", str(out)]) == 0
    assert verify(out) == 0


# --- comparison ------------------------------------------------------------------------


def test_subequiv_to_stdout(capsys, odometer2):
    argv = ["subequiv", "--system", odometer2, "--source", "mod 8:0"]
    code = main([*argv, "--target", "mod 8:3,5,6"])
    assert code == 0
    art = WitnessArtifact.model_validate_json(capsys.readouterr().out)
    assert [p.mover for p in art.pieces] == [[3]]
    assert art.certificate.passed


def test_subequiv_failure_exits_one(odometer2):
    argv = ["subequiv", "--system", odometer2, "--source", "all", "--target", "mod 2:0"]
    code = main([*argv, "--window", "0"])
    assert code == 1


def test_divide_then_verify(tmp_path, odometer2):
    out = tmp_path / "halves.json"
    argv = ["divide", "--system", odometer2, "--set", "all", "--m", "2", "--eta", "1/10"]
    code = main([*argv, "--out", str(out)])
    assert code == 0
    art = load_artifact(out)
    assert isinstance(art, PartitionArtifact)
    assert len(art.members) == 2
    assert verify(out) == 0


# --- gamma, rotation, density, tiling ----------------------------------------------------


def test_gamma_then_verify(tmp_path, odometer2):
    out = tmp_path / "gamma.json"
    code = main(
        [
            "gamma",
            "--system",
            odometer2,
            "--L=-1,1",
            "--eps",
            "1/5",
            "--partition-level",
            "2",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    art = load_artifact(out)
    assert isinstance(art, GammaArtifact)
    assert art.Q == 6
    assert len(art.partition) == 4
    assert verify(out) == 0


def test_rotate_then_verify(tmp_path):
    out = tmp_path / "rotation.json"
    code = main(
        [
            "rotate",
            "--alpha",
            "(-1+sqrt5)/2",
            "--depth",
            "6",
            "--samples",
            "500",
            "--cover-eps",
            "1/5",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    art = load_artifact(out)
    assert isinstance(art, RotationArtifact)
    assert art.cuts_per_level == [2, 4, 6, 8, 10, 12]
    assert art.census["locus_size"] == 12
    assert verify(out) == 0


def test_rotate_with_a_mesh_schedule(tmp_path):
    out = tmp_path / "rotation.json"
    argv = ["rotate", "--alpha", "(-1+sqrt5)/2", "--partition", "uniform-schedule"]
    code = main([*argv, "--depth", "4", "--samples", "200", "--out", str(out)])
    assert code == 0
    art = load_artifact(out)
    assert isinstance(art, RotationArtifact)
    assert art.partition == "uniform-schedule"
    claims = {c.name: c for c in art.certificate.claims}
    for k in range(1, 5):
        assert claims[f"member_diameter_le_mesh_{k}"].passed
        assert claims[f"mesh_schedule_{k}"].passed
    assert claims["locus_is_endpoint_orbit"].passed
    assert verify(out) == 0


def test_rational_rotation_is_a_precondition_failure():
    assert main(["rotate", "--alpha", "1/3", "--depth", "3"]) == 3


def test_density_on_fibonacci(tmp_path, configs):
    out = tmp_path / "density.json"
    code = main(
        [
            "density",
            "--system",
            str(configs / "fibonacci.toml"),
            "--set",
            "word:a@0",
            "--max-index",
            "16",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    art = load_artifact(out)
    assert isinstance(art, DensityArtifact)
    assert [r.index for r in art.curve] == [1, 2, 4, 8, 16]
    assert verify(out) == 0


def test_tile_then_verify(tmp_path):
    out = tmp_path / "tiling.json"
    code = main(
        [
            "tile",
            "--K=-1,1",
            "--delta",
            "2",
            "--eps",
            "1/10",
            "--region",
            "0..99",
            "--tile",
            "0..7",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    assert len(json.loads(out.read_text())["placements"]) == 12
    assert verify(out) == 0


# --- exit codes ------------------------------------------------------------------------------


def test_malformed_config_exits_two(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[system]\nkind = \"odometer\"\nbases = [[2]]\nspeed = 3\n")
    assert main(["castle", "--system", str(bad), "--rokhlin", "3"]) == 2
    bad.write_text("[system\n")
    assert main(["castle", "--system", str(bad), "--rokhlin", "3"]) == 2


def test_missing_system_exits_two():
    assert run(RunConfig(command="divide", options={"set": "all", "m": 2, "eta": "1/10"})) == 2
    assert run(RunConfig(command="sculpt")) == 2


def test_metrics_file_is_written(tmp_path, odometer2):
    metrics = tmp_path / "metrics.prom"
    out = tmp_path / "rokhlin.json"
    argv = ["castle", "--system", odometer2, "--rokhlin", "3", "--out", str(out)]
    assert main([*argv, "--metrics-file", str(metrics)]) == 0
    assert "castleforge_claims_total" in metrics.read_text()
