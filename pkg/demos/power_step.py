"""Watch the LED power loop follow a depth step.

The tool sits at 40 cm for one second, then jumps to 140 cm.  The table
shows the controlled sum current against the lookup-table target, and the
drive level the loop settles on at each depth.

    python3 demos/power_step.py
"""

import numpy as np

from psdtrack.sim import NoiseModel, TrajectorySpec, default_sim_rig, simulate

rig = default_sim_rig()
x, y = rig.midline_x, rig.tou.ring_height
out = simulate(TrajectorySpec(points=((x, y, 400.0), (x, y, 1400.0)), dwell_frames=100), rig, NoiseModel(), seed=0)

target, measured = out.control["target"], out.control["measured"]
print(" frame  depth   power   target  measured  error")
for n in list(range(95, 120)) + [150, 199]:
    depth = 400 if n < 100 else 1400
    err = (measured[n] - target[n]) / target[n]
    print(f"{n:6d} {depth:6d} {out.power[n]:7.3f} {target[n]:8.0f} {measured[n]:9.0f} {100 * err:+6.1f}%")

bad = np.flatnonzero(np.abs(measured[100:] - target[100:]) > 0.05 * target[100:])
print(f"\nwithin 5% of target from frame {100 + (bad[-1] + 1 if len(bad) else 0)} on")
