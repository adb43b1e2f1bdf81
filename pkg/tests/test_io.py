import logging

import numpy as np
import pytest

from conftest import flat_prior
from rswitch.config import RunConfig, load_config, save_config
from rswitch.data import load_dataset, save_dataset
from rswitch.errors import DataFormatError, SpecificationError, StoreMismatchError
from rswitch.sampler import ChainResult, ProposalScales, SamplerConfig, run_chain
from rswitch.store import load_chain, load_run, persist_chain, persist_run


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# ---------------------------------------------------------------- datasets
def test_well_formed_file(tmp_path):
    d = load_dataset(_write(tmp_path, "t,n,y,const,x\n1,1,0,1,0.5\n1,2,3,1,-1\n2,1,1,1,2.25\n"))
    assert len(d) == 3 and d.names == ["const", "x"]
    assert d.y.tolist() == [0, 3, 1] and d.X[2, 1] == 2.25


def test_duplicate_pair_names_line(tmp_path):
    p = _write(tmp_path, "t,n,y,x\n1,1,0,0.5\n2,1,3,1\n1,1,1,2\n")
    with pytest.raises(DataFormatError, match="line 4"):
        load_dataset(p)


@pytest.mark.parametrize("body,line", [
    ("1,1,0,0.5\n1,2,1.5,1\n", 3),   # non-integer y
    ("1,1,0\n", 2),                  # ragged row
    ("1,1,-2,0.5\n", 2),             # negative y
    ("0,1,2,0.5\n", 2),              # non-positive period
])
def test_malformed_rows(tmp_path, body, line):
    with pytest.raises(DataFormatError, match=f"line {line}"):
        load_dataset(_write(tmp_path, "t,n,y,x\n" + body))


def test_intercept_inserted(tmp_path, caplog):
    with caplog.at_level(logging.INFO):
        d = load_dataset(_write(tmp_path, "t,n,y,x\n1,1,0,0.5\n2,1,2,-0.5\n"))
    assert d.K == 2 and np.all(d.X[:, 0] == 1.0) and d.X[:, 1].tolist() == [0.5, -0.5]
    assert "intercept" in caplog.text


def test_dataset_round_trip(tmp_path):
    d = load_dataset(_write(tmp_path, "t,n,y,x\n1,1,0,0.1\n2,1,2,0.30000000000000004\n"))
    save_dataset(d, tmp_path / "o.csv")
    e = load_dataset(tmp_path / "o.csv")
    assert np.array_equal(d.X, e.X) and np.array_equal(d.y, e.y) and d.names == e.names


# ------------------------------------------------------------------ chains
@pytest.fixture(scope="module")
def small_chain():
    from conftest import small_weekly
    data, spec, lay, free, _ = small_weekly(T=20, N=5)
    return run_chain(data, spec, lay, flat_prior(spec.n_free, 4.0),
                     SamplerConfig(G=200, G_bi=50, thin=3), 7, chain=2)


def test_chain_round_trip_exact(tmp_path, small_chain):
    r = small_chain
    persist_chain(r, tmp_path, "abc")
    back = load_chain(tmp_path, 2, "abc")
    for attr in ("draws", "states", "loglik", "logjoint", "accept_rates"):
        assert np.array_equal(getattr(r, attr), getattr(back, attr)), attr
    assert np.array_equal(r.tuned_scales.sigma, back.tuned_scales.sigma)
    assert back.names == r.names and (back.G, back.G_bi, back.thin) == (200, 50, 3)


def test_changed_hash_refused(tmp_path, small_chain):
    persist_run([small_chain], tmp_path, "abc")
    with pytest.raises(StoreMismatchError):
        load_run(tmp_path, "abd")
    assert len(load_run(tmp_path)) == 1


def test_version_mismatch_refused(tmp_path, small_chain):
    persist_chain(small_chain, tmp_path, "abc")
    meta = tmp_path / "chain_2.json"
    meta.write_text(meta.read_text().replace('"format_version": 1', '"format_version": 99'))
    with pytest.raises(StoreMismatchError, match="version"):
        load_chain(tmp_path, 2)


def test_empty_chain_round_trip(tmp_path):
    r = ChainResult(0, 5, ["a", "b"], np.zeros((0, 2)), np.zeros((0, 7), np.int8),
                    np.zeros(0), np.zeros(0), np.array([np.nan, 0.2]),
                    ProposalScales(np.array([0.1, 0.2])), 10, 5, 1, 2, "boom")
    persist_chain(r, tmp_path)
    back = load_chain(tmp_path, 0)
    assert back.draws.shape == (0, 2) and back.states.shape == (0, 7)
    assert np.isnan(back.accept_rates[0]) and back.error == "boom" and not back.ok


# ------------------------------------------------------------------ config
def test_config_parse_and_digest(tmp_path):
    raw = {"model": {"family": ["negbin", "negbin"], "restrictions": {"beta1[2]": "zero"}},
           "layout": {"kind": "weekly"}, "sampler": {"G": 500, "G_bi": 100, "seed": 3}}
    cfg = RunConfig.from_dict(raw)
    assert cfg.sampler.G == 500 and cfg.restrictions == {"beta1[2]": "zero"}
    spec = cfg.spec(3)
    assert "beta1[2]" not in spec.free_names
    save_config(cfg, tmp_path / "c.yaml")
    again = load_config(tmp_path / "c.yaml")
    assert again.digest() == cfg.digest()
    raw["sampler"]["seed"] = 4
    assert RunConfig.from_dict(raw).digest() != cfg.digest()


@pytest.mark.parametrize("raw", [
    {"model": {"family": ["negbin"]}, "extra": {}},
    {"model": {}},
    {"model": {"family": ["negbin", "negbin"]}, "layout": {"kind": "monthly"}},
    {"model": {"family": ["negbin", "negbin"]}, "sampler": {"warmup": 3}},
    {"model": {"family": ["negbin", "negbin"]}, "layout": {"kind": "intervals"}},
])
def test_config_rejects_bad_input(raw):
    with pytest.raises((SpecificationError, ValueError)):
        RunConfig.from_dict(raw)
