"""
Configuration files and trace files
====================================

Scenarios are plain-text configs; unknown keys are rejected.  Traces are
CSV with a fixed header and a JSON sidecar holding the resolved config.
"""

from pathlib import Path

import numpy as np

from stwobs.config import ConfigError, dump_config, parse_config
from stwobs.simkit import read_trace, run_scenario, write_trace

text = """
[simulation]
duration = 5
[profiles]
current = (0, 120), (2, 300)
fault = (0, 0), (3, 2e-3)
"""
cfg = parse_config(text, "inline.cfg")
print(dump_config(cfg))

try:
    parse_config("[observer]\ndeadzone = 0.01\n", "typo.cfg")
except ConfigError as exc:
    print("rejected:", exc)

out = Path("out_traces")
out.mkdir(exist_ok=True)
tr = run_scenario(cfg)
write_trace(tr, out / "short.csv")
back = read_trace(out / "short.csv")
print("columns:", ", ".join(back.columns))
print("round trip exact:", np.array_equal(back.data, tr.data))
print("resolved config echoed in the sidecar:", "config_text" in back.meta)
