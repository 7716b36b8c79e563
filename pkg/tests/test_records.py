import numpy as np
import pytest

from degrpo_lab import svg
from degrpo_lab.properties import (collapse, crossing_median, occupancy, rise_then_fall, smooth, stratified,
                                   think_by_profile)
from degrpo_lab.policy import warmup_init
from degrpo_lab.records import (COLUMNS, MalformedMetrics, MetricsWriter, first_crossing, metrics_csv_text,
                                read_metrics, summarize, unique_path)
from degrpo_lab.trainer import MetricsRecord


def rec(step, tf=0.5, acc_short=0.25, **kw):
    return MetricsRecord(step=step, think_fraction=tf, acc_short=acc_short, acc_think=0.75, all_correct_short=2,
                         mean_reward=0.1, objective_value=-1e-17, kl=0.0,
                         think_fraction_by_profile=kw.get("prof", {"easy": 0.1, "medium": 0.5, "hard": None}))


def test_csv_schema_and_missing_fields(tmp_path):
    path = tmp_path / "m.csv"
    with MetricsWriter(path) as w:
        w.write(rec(0))
        w.write(rec(1, acc_short=None))
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(COLUMNS)
    assert lines[1] == "0,0.5,0.25,0.75,2,0.1,-1e-17,0.0,0.1,0.5,"
    assert lines[2].split(",")[2] == ""
    rows = read_metrics(path)
    assert rows[1]["acc_short"] is None and rows[0]["step"] == 0 and rows[0]["objective"] == -1e-17
    assert path.read_text() == metrics_csv_text([rec(0), rec(1, acc_short=None)])


def test_writer_never_overwrites(tmp_path):
    (tmp_path / "m.csv").write_text("x")
    with pytest.raises(FileExistsError):
        MetricsWriter(tmp_path / "m.csv")


def test_floats_round_trip_exactly(tmp_path):
    r = rec(0, tf=1 / 3)
    r.mean_reward = 0.1 + 0.2
    path = tmp_path / "m.csv"
    path.write_text(metrics_csv_text([r]))
    row = read_metrics(path)[0]
    assert row["think_fraction"] == 1 / 3 and row["mean_reward"] == 0.1 + 0.2


@pytest.mark.parametrize("body,line", [
    ("step,think_fraction\n", 1),
    (",".join(COLUMNS) + "\n0,0.5\n", 2),
    (",".join(COLUMNS) + "\n0,0.5,,,1,0,0,0,,,\n1,x,,,1,0,0,0,,,\n", 3),
    (",".join(COLUMNS) + "\n,0.5,,,1,0,0,0,,,\n", 2),
])
def test_malformed_names_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(MalformedMetrics, match=f"bad.csv:{line}:"):
        read_metrics(path)


def test_summary():
    s = summarize([rec(i, tf=i / 10) for i in range(10)], last_k=4)
    assert s["steps"] == 10 and s["final"]["think_fraction"] == 0.9
    assert s["last_4_mean"]["think_fraction"] == pytest.approx(0.75)
    assert summarize([]) == {"steps": 0}


def test_unique_path(tmp_path):
    assert unique_path(tmp_path / "a") == tmp_path / "a"
    (tmp_path / "a").mkdir()
    (tmp_path / "a-1").mkdir()
    assert unique_path(tmp_path / "a") == tmp_path / "a-2"
    (tmp_path / "f.svg").write_text("")
    assert unique_path(tmp_path / "f.svg") == tmp_path / "f-1.svg"


def test_first_crossing():
    assert first_crossing([0, 3, 17, 20], 16) == 2
    assert first_crossing([0, 16, 16], 16) is None
    assert first_crossing([64] * 3, 65) is None


def test_crossing_median():
    assert crossing_median([3, 5, None]) == 5
    assert crossing_median([None, None, 4]) == float("inf")


def test_svg_deterministic_and_gaps():
    panel = svg.Panel("p", [svg.Series("a", [0, 1, 2, 3], [0.1, None, 0.3, 0.4]),
                            svg.Series("b", [0, 1], [0.5, 0.6], dashed=True)], y_range=(0, 1))
    one = svg.render([panel], "t")
    assert one == svg.render([panel], "t")
    assert one.startswith("<svg") and one.rstrip().endswith("</svg>")
    assert one.count("<polyline") == 2 and one.count("<circle") == 1      # gap splits series a
    assert ">a</text>" in one and ">b</text>" in one


def test_svg_empty_axes():
    out = svg.render([svg.Panel("empty")])
    assert "<polyline" not in out and "<rect" in out


def test_svg_escapes_labels():
    out = svg.render([svg.Panel("a<b", [svg.Series("x&y", [0, 1], [0, 1])])])
    assert "a&lt;b" in out and "x&amp;y" in out


def test_collapse_detection():
    tf = [0.5] * 50 + [0.97] * 250
    assert collapse(tf).passed
    assert not collapse([0.5] * 300).passed
    assert not collapse([0.5] * 50 + [0.97] * 100 + [0.8] * 150).passed     # minority recovers
    assert not collapse([0.5] * 250 + [0.99] * 50).passed                  # too late


def test_rise_then_fall():
    up = list(np.linspace(0.5, 0.8, 100)) + list(np.linspace(0.8, 0.6, 200))
    assert rise_then_fall(up).passed
    assert not rise_then_fall(list(np.linspace(0.5, 0.8, 300))).passed
    assert not rise_then_fall([0.5] * 50 + [0.99] * 50 + [0.5] * 50).passed      # occupancy floor
    assert len(smooth(range(30), 20)) == 11 and smooth(range(30), 20)[0] == 9.5


def test_occupancy_and_stratified():
    assert occupancy([0.5, 0.06]).passed and not occupancy([0.5, 0.96]).passed
    assert stratified({"easy": 0.2, "medium": 0.5, "hard": 0.6}).passed
    assert not stratified({"easy": 0.4, "medium": 0.5, "hard": 0.6}).passed
    assert not stratified({"easy": 0.2, "medium": 0.7, "hard": 0.6}).passed


def test_think_by_profile_at_warm_start(default_env):
    probs = think_by_profile(warmup_init(default_env, 0.5, 0.9), default_env)
    assert probs == {"easy": 0.5, "medium": 0.5, "hard": 0.5}
