"""
Experiments from the command line
=================================

Write a small config, run it through the CLI, and summarize the metrics.
The bundled paper_fig4.cfg and paper_fig5.cfg use the same format.
"""

import tempfile
from pathlib import Path

from freshcontract.cli import main

work = Path(tempfile.mkdtemp())
(work / "quick.cfg").write_text(f"""
[experiment]
solvers = complete-info, greedy, random
seeds = 0, 1
output_dir = {work / "out"}
eval_states = 50

[env]
r_bounds = 0 2
""")

assert main(["run", str(work / "quick.cfg")]) == 0
main(["summarize", str(work / "out" / "metrics" / "*.csv")])

# The slot oracle is exposed for spot checks.
main(["oracle", "aoi", "--theta", "5", "--t", "2"])
