"""
The significance filter and the noisy view
==========================================

A worker accumulates its updates per parameter and only publishes an
entry once it is large relative to the parameter it changes. The replay
harness checks that a worker's noisy view differs from the serialized
model by exactly the withheld foreign updates.
"""
import numpy as np

from isptrain.consistency import IspAccumulator, accumulate, extract_significant, threshold_at
from isptrain.replay import (deviation_identity_holds, insignificant_foreign_sum, random_trace,
                             replay_noisy_view, serialized_state)
from isptrain.sparse import SparseVector

x = np.array([1.0, 10.0, 0.0])
acc = IspAccumulator(3)
for t in range(1, 5):
    accumulate(acc, SparseVector([0, 1, 2], [0.1, 0.1, 0.01]))
    sent, _ = extract_significant(acc, x, t, v=0.7)
    x[sent.indices] += sent.values
    print(f"t={t} threshold {threshold_at(0.7, t):.3f} published {sent.to_dict()} "
          f"pending {acc.pending().to_dict()}")

# index 2 starts at zero, so any change to it is significant;
# index 1 keeps accumulating because 0.4 / 10 stays below the threshold

trace = random_trace(np.random.default_rng(0), num_workers=3, clocks=4, dim=6)
p, c = 1, 2
t = trace.serial_index(p, c)
gap = replay_noisy_view(trace, p, c).params - serialized_state(trace, t).params
print("view - serialized:", gap)
print("-withheld foreign:", -insignificant_foreign_sum(trace, p, c))
print("identity holds on the whole trace:", deviation_identity_holds(trace))
