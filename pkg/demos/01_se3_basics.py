"""SE(3) toolbox tour: exponential/log maps, perturbations, serialization.

Run:  python demos/01_se3_basics.py
"""

import numpy as np

from edgecalib.geometry import (
    Se3Transform,
    TwistVector,
    exp_map,
    left_perturb,
    log_map,
    rotation_error_deg,
)

# A twist bundles a translational part (meters) and a rotation vector
# (radians). The exponential map turns it into a rigid transform.
xi = TwistVector(rho=[0.3, -0.1, 0.05], phi=np.radians([2.0, -5.0, 10.0]))
t = exp_map(xi)
print("exp(xi) rotation:\n", np.round(t.rotation, 4))
print("exp(xi) translation:", np.round(t.translation, 4))

# log inverts exp as long as the rotation stays away from 180 degrees.
back = log_map(t)
print("log round-trip error:", np.linalg.norm(back.as_array() - xi.as_array()))

# Optimizers nudge an estimate with small left perturbations.
delta = TwistVector([0.001, 0.0, 0.0], [0.0, 0.0, 1e-4])
nudged = left_perturb(t, delta)
mean_deg, roll, pitch, yaw = rotation_error_deg(nudged, t)
print(f"after a tiny nudge: mean rotation offset {mean_deg:.6f} deg")

# Transforms serialize to the 12-number row-major 3x4 text convention and
# JSON; both round-trip losslessly.
line = t.to_kitti_line()
print("as calib line:", line[:60], "...")
assert Se3Transform.from_kitti_line(line).to_kitti_line() == line
print("JSON:", t.to_json()[:70], "...")
