import pytest

from pcverify.config import ConfigError, build_experiment, config_hash, parse_config


def test_defaults_build():
    for text in ("", "[run]\nplant = 'dronerace'\n"):
        exp = build_experiment(parse_config(text))
        assert exp.seed == 0 and len(exp.hash) == 16


def test_autoland_defaults_match_experiment():
    exp = build_experiment(parse_config(""))
    p = exp.params
    assert (p.pr, p.epsilon, p.delta) == (0.9, 0.01, 0.001)
    assert exp.grid.resolution == (16, 16) and exp.grid.nominal == (1.0, 0.0)
    assert (p.max_state_depth, p.max_env_shrinks, p.removal_threshold) == (12, 23, 0.8)


def test_dronerace_defaults():
    exp = build_experiment(parse_config("[run]\nplant = 'dronerace'\n"))
    assert (exp.params.pr, exp.params.epsilon, exp.params.delta) == (0.7, 0.02, 0.01)
    assert exp.sampler.kind == "reference_tube"


def test_hash_ignores_layout_out_and_jobs():
    a = parse_config("[run]\nseed = 3\n")
    b = parse_config("# comment\n[run]\nout = 'elsewhere'\njobs = 4\nseed   =   3\n")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(parse_config("[run]\nseed = 4\n"))


def test_seed_override():
    assert parse_config("[run]\nseed = 3\n", seed=9)["run"]["seed"] == 9


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[run]\nbogus = 1\n",
    "[run]\nplant = 'glider'\n",
    "[run]\nseed = 'abc'\n",
    "not an ini",
])
def test_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("text", [
    "[contract]\npr = 0.995\n",
    "[initial_set]\nbox = 'X9'\n",
    "[initial_set]\nbox = [[0, 1]]\n",
    "[environment]\nbounds = [[0.0, 5.0], [-0.1, 0.6]]\n",
    "[environment]\nnominal = [3.0, 0.0]\n",
    "[observer]\nnot_a_constant = 1\n",
])
def test_bad_experiments(text):
    with pytest.raises(ConfigError):
        build_experiment(parse_config(text))
