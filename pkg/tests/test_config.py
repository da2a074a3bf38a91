import pytest

from spdz_transfer.adversary import Strategy
from spdz_transfer.config import RunConfig, load_config, parse_config
from spdz_transfer.errors import ConfigError


def test_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig(synthetic=2 * 2000)
    assert cfg.degree_matrix().row(1).tolist() == pytest.approx([0.9, 0.1])


def test_full_document(tmp_path):
    text = """\
n: 3
network: III
theta: [[0.8, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]
dataset: {path: data/mnist10k}
epochs: 2
secret_theta: true
tamper: {strategy: CorruptMacShare, targets: [2], delta: 7}
"""
    path = tmp_path / "run.yaml"
    path.write_text(text)
    cfg = load_config(path)
    assert cfg.n == 3 and cfg.network == "III" and cfg.secret_theta
    assert cfg.dataset_path == "data/mnist10k" and cfg.synthetic is None
    assert cfg.tamper.strategy == Strategy.CORRUPT_MAC_SHARE and cfg.tamper.delta == 7
    assert cfg.to_dict()["tamper"]["targets"] == [2]


@pytest.mark.parametrize(
    "text, line, fragment",
    [
        ("n: 2\ntheta: [[0.9, 0.2], [0.1, 0.9]]\n", 2, "theta"),
        ("n: 2\nepochs: many\n", 2, "integer"),
        ("seed: 1\n\nbogus: 3\n", 3, "unknown key"),
        ("n: 3\ntheta: [[1, 0], [0, 1]]\n", 2, "n = 3"),
        ("n: 2\nn: 3\n", 2, "duplicate"),
        ("network: IV\n", 1, "network"),
        ("kappa: 16\n", 1, "kappa"),
        ("precision: 30\n", 1, "precision"),
        ("mode: tcp\nroster: [a:1]\n", 2, "roster"),
        ("n: 2\ntamper: {strategy: CorruptMacShare, targets: [1, 2]}\n", 2, "tamper"),
        ("dataset: {url: x}\n", 1, "dataset"),
        ("hooks: [conv1]\n", 1, "pool"),
        ("n: [1\n", 2, "YAML"),
    ],
)
def test_errors_name_the_line(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "run.yaml")
    assert info.value.line == line
    assert fragment in str(info.value)
    assert str(info.value).startswith(f"run.yaml:{line}:")


def test_overrides_win_and_are_validated():
    cfg = parse_config("n: 2\nepochs: 4\n", overrides={"epochs": 1, "n": 3})
    assert cfg.epochs == 1 and cfg.n == 3
    with pytest.raises(ConfigError) as info:
        parse_config("n: 2\n", overrides={"n": 0})
    assert info.value.line is None


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/run.yaml")
