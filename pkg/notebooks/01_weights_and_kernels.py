# coding: utf-8

# # DenseShift weights, packing and the two MAC kernels
#
# A DenseShift weight is sign * 2**(S + b) and is never zero. The shift S is
# built from T scale latents by the recursion S_t = H(w_t) * (S_{t-1} + 1).

# In[1]:

import numpy as np

from denseshift.kernel.bench import bench
from denseshift.kernel.dot import FixedActivations, dot_denseshift, dot_shift
from denseshift.kernel.packing import pack, to_shift_variant, unpack
from denseshift.reparam import backward_latents, init_low_variance, materialize_shift, shift_states

# In[2]:

lat = init_low_variance((2, 4), bits=3, sigma=1.0, seed=0)
w, codes = materialize_shift(lat)
print("scale latents\n", lat.w_scale.round(2))
print("S_0..S_T for element [0, 0]:", shift_states(lat.w_scale)[:, 0, 0])
print("weights\n", w)

# Gradients flow back through a straight-through estimator. With the
# rescale on, the sign latent's gradient is g * sqrt(S + 1).

# In[3]:

g = np.ones(lat.shape)
g_sign, g_scale = backward_latents(g, lat)
print("sign grad / sqrt(S+1):", (g_sign / np.sqrt(codes.shift + 1.0)).ravel())

# ## Packing
#
# Codes are n bits wide with the sign in bit 0, packed LSB-first into
# 64-bit words.

# In[4]:

blob = pack(codes, bits=3)
print(blob.to_bytes()[:16].hex())
assert np.array_equal(unpack(blob).values().reshape(w.shape), w)

# ## Dot products
#
# The dense kernel is branch-free; the shift-variant kernel has to test
# every code for the zero value first.

# In[5]:

x = FixedActivations.quantize(np.linspace(-1, 1, 4))
row = pack(codes.__class__(codes.sign[0], codes.shift[0], codes.exponent_bias), bits=3)
ref = int(x.values.astype(int) @ (2 ** codes.shift[0] * codes.sign[0]))
print("dense:", dot_denseshift(x, row), " reference:", ref)
print("shift variant:", dot_shift(x, to_shift_variant(row)))

# In[6]:

rep = bench(length=4096, trials=200, warmup=20, rounds=20)
print(f"shift {rep.shift.mean_ns:.0f} ns, denseshift {rep.denseshift.mean_ns:.0f} ns, ratio {rep.ratio:.2f}")
