import numpy as np
import pytest
import yaml


def write_toy_dataset(root, n_users=40, n_items=50, seed=0):
    """Small MovieLens-shaped tables plus a config file pointing at them."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    genres = ["Drama", "Comedy", "Action", "Horror"]
    with open(root / "items.tsv", "w") as fh:
        fh.write("item_id\tgenres\trelease_year\n")
        for i in range(n_items):
            year = "unknown" if i == 7 else str(1950 + (i * 7) % 50)
            fh.write(f"i{i}\t{genres[i % 4]}|{genres[(i + 1) % 4]}\t{year}\n")
    with open(root / "users.tsv", "w") as fh:
        fh.write("user_id\tage\tgender\n")
        for u in range(n_users):
            fh.write(f"u{u}\t{15 + (u * 3) % 50}\t{'MF'[u % 2]}\n")
    popularity = 1.0 / np.arange(1, n_items + 1)
    popularity /= popularity.sum()
    with open(root / "interactions.tsv", "w") as fh:
        fh.write("user_id\titem_id\trating\ttimestamp\n")
        ts = 1000
        for u in range(n_users):
            k = int(rng.integers(3, 12))
            for i in rng.choice(n_items, size=k, replace=False, p=popularity):
                ts += int(rng.integers(1, 50))
                fh.write(f"u{u}\ti{i}\t{int(rng.integers(1, 6))}\t{ts}\n")
    cfg = {
        "data": {
            "interactions": "interactions.tsv",
            "user_table": {"path": "users.tsv", "key": "user_id"},
            "item_table": {"path": "items.tsv", "key": "item_id"},
            "timestamp_column": "timestamp",
            "domains": [
                {"name": "user-id", "column": "user_id", "side": "user"},
                {"name": "item-id", "column": "item_id", "side": "item"},
                {"name": "genre", "column": "genres", "side": "item", "transform": "first_token"},
                {"name": "era", "column": "release_year", "side": "item"},
                {"name": "age", "column": "age", "side": "user"},
            ],
            "user_domain": "user-id",
            "item_domain": "item-id",
            "bins": {"release_year": [1960, 1980], "age": [25, 45]},
            "na_values": ["unknown"],
        },
        "train": {
            "epochs": 2, "batch_size": 32, "learning_rate": 0.01, "embedding_dim": 4,
            "init_std": 0.5, "negative_ratio": 2,
            "adversary": {"base_epsilon": 0.3, "lambda_fixed": 1.0, "t": 10, "anneal_alpha": 0.01},
        },
        "variant": "aafm",
        "seed": 1,
        "output_dir": "runs/toy",
        "eval": {"probe_levels": [0.5, 1.0], "group_domains": ["genre"]},
        "t_values": [1, 5],
    }
    path = root / "toy.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    return path


@pytest.fixture
def toy_config(tmp_path, monkeypatch):
    monkeypatch.setenv("AAFM_OUTPUT_ROOT", str(tmp_path / "out"))
    monkeypatch.setenv("AAFM_THREADS", "1")
    return write_toy_dataset(tmp_path / "data")


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("tests.test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
