"""Seeded end-to-end values recorded after the first verified runs."""

import json
import re

import pytest

from degrpo_lab.cli import main

pytestmark = pytest.mark.slow


def test_compare_seed0(tmp_path, capsys):
    code = main(["compare", "--preset", "vanilla-collapse", "--seeds", "0", "--out", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "compare-vanilla-collapse" / "compare.json").read_text())
    vanilla, decoupled = report["arms"]
    assert vanilla["passed"] and decoupled["passed"]
    assert re.match(r"SHORT fell to 0\.039 at step 123;", vanilla["detail"])

    # trained decoupled params put more think mass on hard queries than on easy ones
    params = tmp_path / "compare-vanilla-collapse" / "degrpo-seed0" / "params.bin"
    capsys.readouterr()
    assert main(["policy-histogram", str(params), "--samples", "2000"]) == 0
    means = dict(re.findall(r"mean P\(think \| (\w+)\) = ([0-9.]+)", capsys.readouterr().out))
    assert float(means["easy"]) < float(means["medium"]) < float(means["hard"])
