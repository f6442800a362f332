"""Shared fixtures: a tiny self-contained task bundle and canned solutions.

The bundle is a linear-regression toy: train.csv holds (x, y) pairs with
y ~= 2x, solutions predict y for the ids in val_features.csv, and the
grader scores RMSE against answer files kept outside the data directories.
"""
from __future__ import annotations

import math
import random
from pathlib import Path

import pytest

from traceopt.bundles import load_task
from traceopt.core import Task

GRADE_SCRIPT = '''#!/usr/bin/env python3
"""Grading contract: grade <submission> --seed <n> -> one line 'SCORE <x>'."""
import argparse
import csv
import math
import random
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent


def read_pairs(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {row["id"]: float(row[[k for k in row if k != "id"][0]]) for row in rows}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("submission")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    predictions = read_pairs(args.submission)
    for name in ("answers_dev.csv", "answers_full.csv"):
        answers = read_pairs(HERE / "private" / name)
        if set(answers) == set(predictions):
            break
    else:
        print("submission ids match no answer key", file=sys.stderr)
        return 2

    ids = sorted(answers)
    if args.seed != 0:
        rng = random.Random(args.seed)
        ids = sorted(rng.sample(ids, max(2, int(0.8 * len(ids)))))
    error = 0.0
    for key in ids:
        error += (predictions[key] - answers[key]) ** 2
    print(f"SCORE {math.sqrt(error / len(ids)):.10f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
'''

BASELINE_CODE = '''import csv
import os

data_dir = os.environ["TASK_DATA_DIR"]
with open(os.path.join(data_dir, "train.csv"), newline="") as fh:
    train = list(csv.DictReader(fh))
mean_y = sum(float(r["y"]) for r in train) / len(train)
with open(os.path.join(data_dir, "val_features.csv"), newline="") as fh:
    val = list(csv.DictReader(fh))
with open(os.environ["OUTPUT_PATH"], "w", newline="") as fh:
    writer = csv.writer(fh)
    writer.writerow(["id", "prediction"])
    for row in val:
        writer.writerow([row["id"], f"{mean_y:.6f}"])
'''

GOOD_CODE = '''import csv
import os

data_dir = os.environ["TASK_DATA_DIR"]
with open(os.path.join(data_dir, "train.csv"), newline="") as fh:
    train = list(csv.DictReader(fh))
sxy = sum(float(r["x"]) * float(r["y"]) for r in train)
sxx = sum(float(r["x"]) ** 2 for r in train)
slope = sxy / sxx
with open(os.path.join(data_dir, "val_features.csv"), newline="") as fh:
    val = list(csv.DictReader(fh))
with open(os.environ["OUTPUT_PATH"], "w", newline="") as fh:
    writer = csv.writer(fh)
    writer.writerow(["id", "prediction"])
    for row in val:
        writer.writerow([row["id"], f"{slope * float(row['x']):.6f}"])
'''

CRASH_CODE = '''import os
print("about to fail")
raise NameError("name 'undefined_feature' is not defined")
'''

HANG_CODE = '''while True:
    pass
'''

ESCAPE_CODE = BASELINE_CODE + '''
with open(os.path.join(os.path.dirname(os.environ["OUTPUT_PATH"]), "..", "canary"), "w") as fh:
    fh.write("scribble")
'''


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_bundle(root: Path, *, dev_time: float = 10.0,
                full_time: float = 20.0) -> Path:
    """Build the toy bundle under root/bundle and return its path."""
    bundle = root / "bundle"
    rng = random.Random(7)
    train_full = [
        (f"t{i}", round(i * 0.5, 4), round(i * 1.0 + rng.uniform(-0.3, 0.3), 4))
        for i in range(20)
    ]
    val_full = [(f"v{i}", round(1.0 + i * 0.25, 4)) for i in range(12)]
    val_dev = val_full[:6]
    train_dev = train_full[:10]

    for split, train, val in (("dev", train_dev, val_dev),
                              ("full", train_full, val_full)):
        data = bundle / "data" / split
        data.mkdir(parents=True)
        _write_csv(data / "train.csv", ["id", "x", "y"],
                   [[i, x, y] for i, x, y in train])
        _write_csv(data / "val_features.csv", ["id", "x"],
                   [[i, x] for i, x in val])

    private = bundle / "private"
    private.mkdir()
    _write_csv(private / "answers_dev.csv", ["id", "answer"],
               [[i, round(2.0 * x, 4)] for i, x in val_dev])
    _write_csv(private / "answers_full.csv", ["id", "answer"],
               [[i, round(2.0 * x, 4)] for i, x in val_full])

    grade = bundle / "grade"
    grade.write_text(GRADE_SCRIPT, encoding="utf-8")
    grade.chmod(0o755)
    (bundle / "baseline.py").write_text(BASELINE_CODE, encoding="utf-8")

    (bundle / "task.toml").write_text(
        f'''id = "toy-reg"
description = "predict y from x; y is roughly 2x"
metric_name = "rmse"
direction = "LowerBetter"
dev_fraction = 0.5
time_limit_dev = {dev_time}
time_limit_full = {full_time}

[schema]
id_column = "id"
value_column = "prediction"
rows_dev = 6
rows_full = 12
''',
        encoding="utf-8",
    )
    return bundle


@pytest.fixture
def bundle_dir(tmp_path) -> Path:
    return make_bundle(tmp_path)


@pytest.fixture
def task(bundle_dir) -> Task:
    return load_task(bundle_dir)
