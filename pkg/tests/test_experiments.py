import json

import pytest

from shapeprint.experiments import (
    EXPERIMENTS,
    ExperimentConfig,
    Lab,
    UnknownExperimentError,
    run_experiment,
)
from shapeprint.obfuscation import StpParams
from shapeprint.synth import default_corpus

SMALL = dict(learn_seconds=1800.0, test_seconds=600.0, trials=4, corpus_sizes=(3, 4))


def small_lab(cfg):
    return Lab(cfg, default_corpus()[:4])


def test_config_round_trip():
    cfg = ExperimentConfig(seed=3, stp=StpParams(inject_prob=0.2), **SMALL)
    d = cfg.to_dict()
    assert json.loads(json.dumps(d)) == d
    assert ExperimentConfig.from_dict(d) == cfg
    with pytest.raises(ValueError):
        ExperimentConfig(trials=0)


@pytest.mark.parametrize("name", ["dominant", "local", "count", "subset-fsbc", "level100", "estimate-q", "chi2"])
def test_reports_are_byte_identical(tmp_path, name):
    outs = []
    for run in ("a", "b"):
        cfg = ExperimentConfig(seed=1, out_dir=str(tmp_path / run), **SMALL)
        paths = run_experiment(name, cfg, small_lab(cfg))
        outs.append({p.name: p.read_bytes() for p in paths})
    assert outs[0] == outs[1]
    summary = json.loads(outs[0][name.replace("-", "_") + ".json"])
    assert summary["experiment"] == name and summary["seed"] == 1


def test_seed_changes_results(tmp_path):
    res = []
    for seed in (1, 2):
        cfg = ExperimentConfig(seed=seed, out_dir=str(tmp_path / str(seed)), **SMALL)
        res.append(run_experiment("count", cfg, small_lab(cfg))[0].read_bytes())
    assert res[0] != res[1]


def test_unknown_experiment():
    with pytest.raises(UnknownExperimentError):
        run_experiment("nope", ExperimentConfig())
    assert len(EXPERIMENTS) == 11
