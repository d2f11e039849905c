import time

import numpy as np

from cpperturb import counterexample as ce
from cpperturb import cbnorm, cpmap, perturb
from cpperturb.errors import HypothesisFailureError

t0 = time.time()
fam = ce.projection_family(8, 0.92, seed=0, budget=100, estimate_samples=1500)
inst = ce.build_counterexample(fam)
phi = inst.map
print(f"family r={len(fam.members)} covering={fam.covering_radius_estimate.value:.4f}  [{time.time()-t0:.1f}s]")

t0 = time.time()
pm = cbnorm.positive_min(phi, 9, restarts=6, seed=5)
print(f"positive_min(level 9) = {pm.value:.9f}  cert={1.0/(2*pm.value-1.0):.9f}  [{time.time()-t0:.1f}s]")

t0 = time.time()
sv = perturb.optimal_state(phi, restarts=12, seed=0)
w = np.linalg.eigvalsh(sv.state)
print(f"optimal_state value={sv.value:.9f} rank={(w > 1e-9).sum()}  [{time.time()-t0:.1f}s]")

t0 = time.time()
vv = perturb.vector_state_value(phi, restarts=12, seed=0)
print(f"vector_state_value = {vv:.9f}  [{time.time()-t0:.1f}s]")

# what delta would the amplified gates need / produce?
for delta in (0.04, 0.08, 0.12):
    t0 = time.time()
    try:
        res = perturb.amplified_perturb(phi, delta, seed=0)
        print(f"delta={delta}: SUCCESS bound={res.bound:.6f} k={res.level}  [{time.time()-t0:.1f}s]")
    except HypothesisFailureError as e:
        print(f"delta={delta}: HypothesisFailureError: {e}  [{time.time()-t0:.1f}s]")
    except Exception as e:
        print(f"delta={delta}: {type(e).__name__}: {e}  [{time.time()-t0:.1f}s]")
