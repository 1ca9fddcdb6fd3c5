import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

GOLDEN_DIR = Path(__file__).parent / "data" / "golden"


def pytest_addoption(parser):
    parser.addoption("--bless", action="store_true", default=False,
                     help="regenerate golden files instead of comparing")


@pytest.fixture(scope="session")
def bless(request):
    return request.config.getoption("--bless")


@pytest.fixture(scope="session")
def golden_dir():
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    return GOLDEN_DIR


@pytest.fixture(scope="session")
def mock_corpus(tmp_path_factory):
    """The demo corpus, built once per session."""
    from editgauge.mockdata import build_mock_corpus

    root = tmp_path_factory.mktemp("mockcorpus")
    paths = build_mock_corpus(root, seed=7)
    paths["root"] = root
    return paths


@pytest.fixture(scope="session")
def pipeline(mock_corpus, tmp_path_factory):
    """Filter + gen-queries + gen-captions + evaluate over the demo corpus."""
    from editgauge.cli import main

    root = mock_corpus["root"]
    out = tmp_path_factory.mktemp("pipeline")
    weights = Path(__file__).parents[1] / "src" / "editgauge" / "data" / \
        "default_weights.json"

    assert main(["filter",
                 "--corpus", str(mock_corpus["corpus"]),
                 "--out", str(out / "filter.jsonl"),
                 "--seg-backend", "segmenter", "--vqa-backend", "vqa",
                 "--backends", str(mock_corpus["backends"]),
                 "--prepared-dir", str(out / "prep")]) == 0
    assert main(["gen-queries",
                 "--corpus", str(out / "prep"),
                 "--filter-report", str(out / "filter.jsonl"),
                 "--seed", "7",
                 "--out", str(out / "queries.jsonl"),
                 "--balance-config", str(mock_corpus["balance"]),
                 "--backends", str(mock_corpus["backends"])]) == 0
    assert main(["gen-captions",
                 "--queries", str(out / "queries.jsonl"),
                 "--corpus", str(out / "prep"),
                 "--out", str(out / "queries_cap.jsonl"),
                 "--filter-report", str(out / "filter.jsonl")]) == 0
    for model in mock_corpus["models"]:
        assert main(["evaluate",
                     "--queries", str(out / "queries_cap.jsonl"),
                     "--edited-dir", str(mock_corpus["edited"] / model),
                     "--backends", str(mock_corpus["backends"]),
                     "--weights", str(weights),
                     "--out", str(out / f"metrics_{model}.jsonl"),
                     "--corpus", str(out / "prep"),
                     "--filter-report", str(out / "filter.jsonl"),
                     "--model", model]) == 0
    return {
        "root": out,
        "corpus": mock_corpus["corpus"],
        "prep": out / "prep",
        "filter": out / "filter.jsonl",
        "queries": out / "queries.jsonl",
        "queries_cap": out / "queries_cap.jsonl",
        "metrics": {m: out / f"metrics_{m}.jsonl" for m in mock_corpus["models"]},
        "weights": weights,
        "backends": mock_corpus["backends"],
        "votes": mock_corpus["votes"],
        "balance": mock_corpus["balance"],
        "models": mock_corpus["models"],
        "edited": mock_corpus["edited"],
    }


@pytest.fixture(scope="session")
def evaluated_samples(pipeline):
    from editgauge.records import EvaluatedSample, load_records

    return {model: load_records(path, EvaluatedSample)
            for model, path in pipeline["metrics"].items()}
