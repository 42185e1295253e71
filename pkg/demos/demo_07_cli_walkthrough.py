"""
The command line end to end
===========================

Generate a corpus, train it under BSP and ISP, compare the two metric
logs on a few budgets, then run the built-in consistency checks. Each
call below is the same as typing ``isptrain ...`` in a shell.
"""
import tempfile
from pathlib import Path

from isptrain.cli import main

tmp = Path(tempfile.mkdtemp())
data = tmp / "data"

assert main(["gen-data", "--kind", "lr", "--n", "8000", "--dim", "500", "--sparsity", "0.02",
             "--b", "200", "--seed", "5", "--out", str(data)]) == 0

# the stop rule and step size come in as plain flags or dotted --set keys
for sync, v in (("bsp", "0"), ("isp", "0.7")):
    print(f"\n-- {sync} --")
    assert main(["run", "--data", str(data), "--sync", sync, "--v", v, "--workers", "4",
                 "--max-steps", "150", "--set", "optimizer.eta=1.0",
                 "--out", str(tmp / sync)]) == 0

print("\n-- report --")
assert main(["report", str(tmp / "bsp" / "metrics.csv"), str(tmp / "isp" / "metrics.csv"),
             "--budgets", "0.001,0.002", "--out", str(tmp / "report")]) == 0
print(sorted(p.name for p in (tmp / "report").iterdir()))

print("\n-- verify --")
assert main(["verify", "--traces", "50"]) == 0
