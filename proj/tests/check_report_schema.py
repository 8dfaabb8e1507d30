#!/usr/bin/env python3
"""Run every method through the tool and validate each report against the schema."""

import json
import pathlib
import shutil
import subprocess
import sys

import jsonschema

SYNTH = """seed: 3
method:
  name: synth
  N: 240
  n: 5
  effects:
    - combo: [x2, x4]
      parity: {high: 0.9, low: 0.1}
  output: data.csv
"""

METHODS = {
    "mdr": "method:\n  name: mdr\n  r_max: 2\n",
    "mdrir": "method:\n  name: mdrir\n  r_max: 2\n",
    "logicreg": "method:\n  name: logicreg\n  trees: 1\n  r_max: 3\n  schedule:\n    steps: 300\n",
    "cart": "method:\n  name: cart\n  criterion: weighted\n",
    "rf": "method:\n  name: rf\n  trees: 50\n  criterion: weighted\n",
    "sgb": "method:\n  name: sgb\n  stages: 50\n  grid:\n    leaves: [2, 4]\n",
    "cvim": "method:\n  name: cvim\n  replicates: 20\n  criterion: weighted\n",
    "permtest": "permtest:\n  replicates: 20\nmethod:\n  name: mdr\n  r_max: 1\n",
    "balanced": "balance:\n  repeats: 2\nmethod:\n  name: cart\n  criterion: weighted\n",
}


def run(tool, command, config, report):
    proc = subprocess.run([tool, command, str(config), "-o", str(report)],
                          capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(f"{config.name} exited {proc.returncode}: {proc.stderr.strip()}")
    return json.loads(report.read_text())


def main():
    tool, schema_path, workdir = sys.argv[1:4]
    work = pathlib.Path(workdir)
    shutil.rmtree(work, ignore_errors=True)
    work.mkdir(parents=True)
    validator = jsonschema.Draft202012Validator(json.loads(pathlib.Path(schema_path).read_text()))

    failures = 0
    configs = [("synth", SYNTH)]
    configs += [(name, "seed: 5\nfolds: 4\ndataset:\n  path: data.csv\n" + body) for name, body in METHODS.items()]
    for name, text in configs:
        config = work / f"{name}.yaml"
        config.write_text(text)
        try:
            report = run(tool, "synth" if name == "synth" else "run", config, work / f"{name}.json")
        except RuntimeError as e:
            print(f"FAIL {name}: {e}")
            failures += 1
            continue
        errors = sorted(validator.iter_errors(report), key=lambda e: list(e.path))
        for e in errors:
            print(f"FAIL {name}: {'/'.join(map(str, e.path))}: {e.message}")
        failures += bool(errors)
        if not errors:
            print(f"ok {name}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
