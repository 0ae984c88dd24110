"""
The extended pose group SE_2(3)
===============================

A relative state is a rotation, a velocity and a position packed into one
5x5 matrix.  This script walks through the basic operations and checks
them against dense matrix arithmetic.
"""

# %%
import numpy as np
from scipy.linalg import expm

from relkal import lie

rng = np.random.default_rng(0)

# %%
# An algebra vector is (omega, a, u).  hat() turns it into a 5x5 matrix and
# exp() maps it to the group in closed form.
w = np.array([0.3, -0.1, 1.2, 0.5, 0.0, -0.2, 1.0, 2.0, 0.5])
g = lie.exp(w)
print(g.matrix().round(4))
print("closed form vs scipy expm:", np.abs(g.matrix() - expm(lie.hat(w))).max())

# %%
# log() undoes exp() as long as the rotation stays away from pi.
print("log(exp(w)) - w:", np.abs(lie.log(g) - w).max())

try:
    lie.log(lie.exp(np.r_[0, 0, np.pi, np.zeros(6)]))
except lie.CutLocusError as e:
    print("refused:", e)

# %%
# Composition and inversion are matrix product and inverse in disguise.
h = lie.exp(rng.normal(size=9))
print("compose:", np.abs((g @ h).matrix() - g.matrix() @ h.matrix()).max())
print("inverse:", np.abs(g.inverse().matrix() - np.linalg.inv(g.matrix())).max())

# %%
# The adjoint moves algebra vectors between left and right trivializations.
v = rng.normal(size=9)
lhs = lie.hat(lie.adjoint_matrix(g) @ v)
rhs = g.matrix() @ lie.hat(v) @ g.inverse().matrix()
print("Ad_g as conjugation:", np.abs(lhs - rhs).max())
print("Ad(exp w) = expm(ad w):", np.abs(lie.adjoint_matrix(g) - expm(lie.ad_matrix(w))).max())

# %%
# Everything broadcasts: a batch of 1000 elements is one call.
batch = lie.exp(rng.uniform(-2, 2, (1000, 9)))
print(batch.batch_shape, batch.is_valid())
