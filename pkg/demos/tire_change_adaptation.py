"""Adapt a hard-tire model after the car switches to softer tires.

Run with ``python demos/tire_change_adaptation.py``.

The car's model was identified on hard tires. Softer tires are fitted
(peak force 20% lower) and the car drives a few laps. Two iterations
starting from the old model are enough to bring the one-step prediction
error back down.
"""

import tempfile

from sysid.bench import run_adaptation
from sysid.config import bundled_config_path, load_config
from sysid.identification import curve_rms
from sysid.vehicle_model import PacejkaParams

cfg = load_config(bundled_config_path("adaptation"))
print(f"start: hard tires, D_f = {cfg.tires_init.front.D}, D_r = {cfg.tires_init.rear.D}")
print(f"data:  soft tires, D_f = {cfg.tires_gt.front.D}, D_r = {cfg.tires_gt.rear.D}")

with tempfile.TemporaryDirectory() as out:
    rep = run_adaptation(cfg, out, n_iter=2)

before, after = rep["rmse_before"], rep["rmse_after"]
print(f"\none-step RMSE  v_y   {before['v_y']:.5f} -> {after['v_y']:.5f} m/s")
print(f"               omega {before['omega']:.5f} -> {after['omega']:.5f} rad/s")
print(f"two iterations took {rep['timing']['iterations_s']:.2f} s")

adapted = PacejkaParams.from_dict(rep["tires_adapted"])
for name, tires in (("hard model", cfg.tires_init), ("adapted", adapted)):
    f, r = curve_rms(tires, cfg.tires_gt)
    print(f"{name:>10}: gap to the soft tires front {f:.1%}, rear {r:.1%} of peak force")
