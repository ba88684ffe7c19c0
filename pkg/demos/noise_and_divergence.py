"""What measurement noise does to both identification methods.

Run with ``python demos/noise_and_divergence.py [eta]`` (default 0.6).

Gaussian noise proportional to each channel's mean magnitude is added to
all four logged signals. The direct least-squares fit (NLS) is biased
towards weaker tires because the noisy inputs look like unexplained
motion. The iterative method has a different failure: after filtering,
the noise is strongly correlated from one sample to the next, so the
network learns that "the next state looks like this one". That makes the
corrected model nearly marginally stable, and the virtual steering ramp
blows up. When this happens the loop stops and keeps its best parameters
so far, which for these noise levels is the starting guess.
"""

import sys

import numpy as np

from sysid.bench import identify_config, simulate_pair
from sysid.config import bundled_config_path, load_config
from sysid.data_pipeline import build_error_targets, filter_dataset, preprocess
from sysid.identification import curve_rms, iterate, nls_identify, one_step_rmse
from sysid.residual_net import ResidualNet, TrainConfig
from sysid.vehicle_model import ControlInput, LateralState, euler_step

eta = float(sys.argv[1]) if len(sys.argv) > 1 else 0.6
cfg = load_config(bundled_config_path("default"))
veh, start = cfg.vehicle, cfg.tires_init
train, test = simulate_pair(cfg, eta=eta, seed=0)
data = preprocess(train)


def summary(name, tires):
    vy, om = one_step_rmse(tires, veh, test)
    f, r = curve_rms(tires, cfg.tires_gt)
    print(f"{name:>14}: clean-test RMSE {0.5 * (vy + om):.5f}, curve gap front {f:.0%} rear {r:.0%}")


print(f"noise multiplier eta = {eta}")
summary("starting guess", start)
summary("NLS", nls_identify(filter_dataset(train), veh, start, seed=0))
rep = iterate(data, veh, start, identify_config(cfg))
print(f"iterative loop: {rep.message or 'completed'}; kept iteration {rep.selected_iteration}")
summary("iterative", rep.tires)

# Local dynamics of the one-step map, nominal versus corrected, at the ramp speed.
targets = build_error_targets(data, veh, start)
net, _ = ResidualNet.fit(targets.inputs, targets.targets, TrainConfig(seed=0))
v_x = float(np.mean(data.v_x))
print(f"\nnoise std in the error targets: {np.round(targets.targets.std(axis=0), 4)}")


def jacobian(step, x, h=1e-6):
    f0 = np.asarray(step(x))
    cols = [(np.asarray(step(x + h * np.eye(2)[i])) - f0) / h for i in range(2)]
    return np.column_stack(cols)


print("steer  |eig| nominal   |eig| corrected")
for delta in (0.0, 0.1, 0.2):
    u = ControlInput(v_x, delta)
    x = np.array([0.0, v_x * delta / veh.wheelbase])
    nominal = lambda s: euler_step(LateralState(*s), u, veh, start, cfg.sim.T_s)
    corrected = lambda s: np.asarray(nominal(s)) + net(np.array([v_x, s[0], s[1], delta]))
    a = np.sort(np.abs(np.linalg.eigvals(jacobian(nominal, x))))
    b = np.sort(np.abs(np.linalg.eigvals(jacobian(corrected, x))))
    print(f"{delta:5.2f}  {a[0]:.2f} {a[1]:.2f}       {b[0]:.2f} {b[1]:.2f}")
print("An eigenvalue magnitude at or above 1 means the ramp rollout cannot settle.")
