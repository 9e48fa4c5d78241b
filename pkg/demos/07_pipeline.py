"""
The command-line pipeline
=========================

Drive the six pipeline stages from Python exactly as the ``bhvloss``
command would, with a deliberately small GP budget.
"""

import tempfile
from pathlib import Path

from bhvloss.cli import main

out = Path(tempfile.mkdtemp(prefix="bhvloss-"))
main(["gen-data", "--out", str(out)])
main(["run-gp", "--out", str(out), "--runs", "3", "--population-size", "80",
      "--generations", "8", "--conditions", "4"])
# loose thresholds: a few short runs rarely reach err_max <= 80%
main(["select", "--out", str(out), "--min-nrun", "2", "--max-errmax", "150"])
main(["fit-surface", "--out", str(out), "--reference-eq15"])
main(["validate", "--out", str(out)])
main(["report", "--out", str(out)])
print(sorted(p.name for p in out.iterdir()))
