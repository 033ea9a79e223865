import copy
import json

import pytest

from covrel.cli import IoError, SchemaError, config_from_dict, default_config_path, main, parse_config, random_words


def base():
    with open(default_config_path()) as fh:
        return json.load(fh)


def write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_packaged_config_parses():
    rc = parse_config(default_config_path())
    assert [h.name for h in rc.hsets] == ["N0", "N1", "N2"]
    assert rc.relations == [(0, 2), (1, 0), (1, 1), (2, 0), (2, 1)]
    assert rc.raw["rounding"] == "ulp"
    assert tuple(rc.subdivision) == (64, 8, 256)


def test_defaults_are_filled():
    cfg = base()
    for k in ("integrator", "covering", "robustness", "symbolic", "witness", "rounding", "relations"):
        cfg.pop(k, None)
    rc = config_from_dict(cfg)
    assert rc.raw["integrator"]["order"] == 12
    assert rc.relations == [(0, 2), (1, 0), (1, 1), (2, 0), (2, 1)]


@pytest.mark.parametrize(
    "mutate, needle",
    [
        (lambda c: c.update(bogus=1), "bogus"),
        (lambda c: c["integrator"].update(order=1), "integrator/order"),
        (lambda c: c["hsets"][1].update(s_dir=list(c["hsets"][1]["u_dir"])), "hsets/1"),
        (lambda c: c.update(relations=[["N0", "N9"]]), "N9"),
        (lambda c: c["hsets"][0].update(center=["x", 1.0]), "hsets/0"),
        (lambda c: c["robustness"].update(delta_bracket=[0.1, 0.01]), "delta_bracket"),
        (lambda c: c["system"].update(name="lorenz"), "system/name"),
    ],
)
def test_schema_errors_name_the_key(mutate, needle):
    cfg = base()
    mutate(cfg)
    with pytest.raises(SchemaError) as err:
        config_from_dict(cfg)
    assert needle in str(err.value)


def test_fault_exit_codes(tmp_path, capsys):
    assert main(["words", "--config", str(tmp_path / "missing.json")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "IoError" and "missing.json" in err["message"]
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["words", "--config", str(bad)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "SchemaError"
    with pytest.raises(IoError):
        parse_config(tmp_path / "missing.json")


def test_words_report(tmp_path, capsys):
    out = tmp_path / "r" / "words.json"
    assert main(["words", "--len", "3", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert set(rep) >= {"meta", "config_echo", "relations", "robustness", "symbolic", "witnesses"}
    sym = rep["symbolic"]
    assert sym["convention"] == "forward"
    assert sym["counts"]["2"] == 5
    assert len(sym["words"]) == 8
    assert isinstance(sym["entropy"], str) and float(sym["entropy"]) > 0
    assert main(["words", "--convention", "paper", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["symbolic"]["matrix"] == [[0, 1, 1], [0, 1, 1], [1, 0, 0]]
    # no temporary files left behind
    assert [p.name for p in out.parent.iterdir()] == ["words.json"]


def test_witness_csv(tmp_path):
    out, csvp = tmp_path / "w.json", tmp_path / "traj.csv"
    code = main(["witness", "--witness-word", "1,1,0,2", "--delta-value", "1e-5", "--csv", str(csvp), "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["witnesses"][0]["placed"] and rep["witnesses"][0]["non_rigorous"]
    lines = csvp.read_text().splitlines()
    assert lines[0] == "t,x,y,z,section_hit"
    hits = [ln for ln in lines[1:] if ln.endswith(",1")]
    assert len(hits) == 4


def test_random_words_are_admissible_and_seeded():
    rel = [(0, 2), (1, 0), (1, 1), (2, 0), (2, 1)]
    a = random_words(rel, 10, 20, seed=0)
    assert a == random_words(rel, 10, 20, seed=0)
    assert a != random_words(rel, 10, 20, seed=1)
    for w in a:
        assert len(w) == 20
        assert all((x, y) in rel for x, y in zip(w, w[1:]))


def test_subdivision_flag_validation(capsys):
    assert main(["words", "--subdivision", "0"]) == 2
    assert main(["words", "--threads", "0"]) == 2
