"""
The command-line pipeline
=========================

``stcrf`` drives a full experiment from files: sample data, train, infer,
score.  Everything downstream of the seed is deterministic, so two runs
produce byte-identical reports.
"""

import json
import tempfile
from pathlib import Path

from stcrf.cli import main

work = Path(tempfile.mkdtemp())
cfg = work / "config.json"
cfg.write_text(json.dumps({
    "mode": "gsteg",
    "synth": {"label_sizes": [3, 3, 3], "num_steps": 2, "num_instances": 300, "coupling": 2.0},
    "train": {"learning_rate": 0.01, "epochs": 5, "gradient_clip": 5.0},
}, indent=2))

run = work / "run"
main(["synth", "--config", str(cfg), "--seed", "100", "--out", str(run), "--name", "test.jsonl"])
main(["train", "--config", str(cfg), "--seed", "0", "--out", str(run)])
main(["infer", str(run / "checkpoint.json"), str(run / "test.jsonl"), "--out", str(run)])
main(["eval", "recognize", str(run / "labels.jsonl"), str(run / "test.jsonl")])
main(["verify", "oracle"])
