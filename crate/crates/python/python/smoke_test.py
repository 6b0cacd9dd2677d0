"""Smoke test for the qfc_lab extension: train quick knowledge bases, infer,
fuse, run one scenario and compare two systems."""

import csv
import io
import json
import math
import sys
import tempfile
from pathlib import Path

import qfc_lab

QUICK = {
    "duration": 3.0,
    "displacement_time": 1.5,
    "teaching_ga": {"population": 8, "generations": 4, "crossover_rate": 0.9,
                    "mutation_rate": 0.1, "mutation_scale": 0.1, "elite": 1, "seed": 0},
    "kb_ga": {"population": 6, "generations": 3, "crossover_rate": 0.9,
              "mutation_rate": 0.1, "mutation_scale": 0.1, "elite": 1, "seed": 0},
}


def rows(text):
    return list(csv.DictReader(l for l in io.StringIO(text) if not l.startswith("#")))


def main():
    with tempfile.TemporaryDirectory() as tmp:
        config = json.dumps(QUICK)
        paths = qfc_lab.train(tmp, seed=1, config_json=config)
        assert len(paths) == 4, paths

        kb = qfc_lab.KnowledgeBase.load(paths[0])
        assert kb.rule_count == 25
        kp, kd, ki = kb.infer(0.1, 0.0)
        assert 0 <= kp <= 80 and 0 <= kd <= 6 and 0 <= ki <= 40
        again = qfc_lab.KnowledgeBase.from_json(kb.to_json())
        assert again.infer(0.1, 0.0) == (kp, kd, ki)
        surface = rows(kb.surface("kp", 10))
        assert len(surface) == 100

        fused = qfc_lab.qfi_step([[(kp, kd, ki)] * 2] * 3, "spatial")
        assert all(math.isfinite(v) for v in fused)

        scenario = {
            "name": "smoke",
            "reference": {"initial_deg": [-90, 0, 0], "target_deg": [-60, 20, 10]},
            "duration": 1.0,
            "topology": "separated-fc",
            "kb_paths": [str(p) for p in paths[:3]],
            "seed": 1,
        }
        record = json.loads(qfc_lab.run_scenario(json.dumps(scenario), "json"))
        assert record["provenance"]["seed"] == 1

        table = rows(qfc_lab.compare(tmp, ["separated", "qfc-temporal"], ["standard"], seed=1, config_json=config))
        assert sorted(r["system"] for r in table) == ["qfc-temporal", "separated"], table

        assert abs(qfc_lab.kl_divergence([1, 0], [1, 1]) - math.log(2)) < 1e-12
    print("qfc_lab smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
