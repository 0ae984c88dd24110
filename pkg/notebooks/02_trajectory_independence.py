"""
Which errors evolve on their own?
=================================

The vehicle kinematics split into a gravity term on the left, the velocity
feeding the position, and the IMU readings on the right.  The checkers test
the identities that make the estimation error, and the error of the relative
state, independent of the trajectory.
"""

# %%
import numpy as np

from relkal import lie, models, sti


def inputs(which):
    def f(t):
        u1, u2 = models.nominal_inputs(t)
        u = u1 if which == 1 else u2
        return u.omega, u.accel

    return f


d1 = sti.vehicle_field(inputs(1))
d2 = sti.vehicle_field(inputs(2))
samples = sti.sample_points(np.random.default_rng(0), 300)

# %%
# The single-vehicle error and the left relative state pass; the right
# relative state fails because the two vehicles see different inputs.
for report in (
    sti.check_eti(d1, samples),
    sti.check_l_rti(d1, d2, samples),
    sti.check_r_rti(d1, d2, samples),
):
    print(report.to_json())

# %%
# Give both vehicles the same inputs and the right relative state passes too.
print(sti.check_r_rti(d1, d1, samples).to_json())

# %%
# The payoff: the relative error can be integrated by itself, without either
# vehicle's trajectory, and agrees with the error of two integrated pairs.
dt, n = 0.01, 500
g1, g2, _, _ = models.vehicle_states(0.0)
gb1 = g1 @ lie.exp(np.r_[0, 0, 0.8, 0.3, 0.2, 0, 0.5, 0, 0])
gb2 = g2


def run(rhs, g):
    for k in range(n):
        g = lie.rk4_step(rhs, k * dt, g, dt)
    return g


flow = lambda d: (lambda t, g: sti.reconstruct_field(d, g, t))
e0 = (g1.inverse() @ g2).inverse() @ (gb1.inverse() @ gb2)
e = run(lambda t, g: sti.rel_error_ode(d1, d2, g, "L", "L", t, verify=False), e0)
a, b, c, d = (run(flow(f), x) for f, x in ((d1, g1), (d2, g2), (d1, gb1), (d2, gb2)))
direct = (a.inverse() @ b).inverse() @ (c.inverse() @ d)
print("autonomous error vs two integrated pairs:", np.abs(e.matrix() - direct.matrix()).max())

# %%
# Asking for the right relative error here is refused up front.
try:
    sti.rel_error_ode(d1, d2, e0, "L", "R", 1.0)
except sti.RTIPreconditionError as err:
    print(err)
