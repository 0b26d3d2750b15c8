"""Shared fixtures: full pipeline runs used by the acceptance gate.

The heavy fixtures are session-scoped so the complete train/eval/ablate
pipeline executes once per test session and every acceptance criterion reads
from the same artifacts, exactly as a user of the command line would.
"""

import json
import os

import pytest

from emoface.cli import main as cli_main
from emoface.pipeline import Paths

PIPELINE_COMMANDS = ("gen-data", "train-dee", "train-vqvae", "train-gen", "eval")
ABLATE_VARIANTS_ORDER = ("vae", "vqvae", "no-emo", "no-lip")


def run_pipeline(out_dir: str, with_ablations: bool) -> Paths:
    for cmd in PIPELINE_COMMANDS:
        rc = cli_main([cmd, "--out", out_dir])
        assert rc == 0, f"{cmd} exited {rc}"
    if with_ablations:
        for variant in ABLATE_VARIANTS_ORDER:
            rc = cli_main(["ablate", variant, "--out", out_dir])
            assert rc == 0, f"ablate {variant} exited {rc}"
    return Paths(out_dir)


@pytest.fixture(scope="session")
def full_run(tmp_path_factory) -> Paths:
    """Default-config pipeline plus all four ablations."""
    return run_pipeline(str(tmp_path_factory.mktemp("accept") / "run_a"), with_ablations=True)


@pytest.fixture(scope="session")
def repeat_run(tmp_path_factory) -> Paths:
    """Second identical pipeline (no ablations) for the determinism criterion."""
    return run_pipeline(str(tmp_path_factory.mktemp("accept") / "run_b"), with_ablations=False)


@pytest.fixture(scope="session")
def eval_report(full_run) -> dict:
    with open(os.path.join(full_run.reports, "eval.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def ablation_table(full_run) -> dict:
    with open(os.path.join(full_run.reports, "ablation.json")) as fh:
        return json.load(fh)["rows"]
