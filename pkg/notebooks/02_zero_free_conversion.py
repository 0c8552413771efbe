# coding: utf-8

# # Rewriting a shift network without zeros
#
# A shift network may use the weight 0. Every such network has an equivalent
# zero-free one: each weight becomes a pair over a duplicated input,
# 0 -> (+2^b, -2^b) and s*2^p -> (s*2^(p+1), -s*2^p).

# In[1]:

import numpy as np

from denseshift.convert import convert_layer, convert_network, is_zero_free, shift_network_from, verify_equivalence
from denseshift.engine import Network
from denseshift.engine import spec as S

# In[2]:

W = np.array([[2.0, 1.0], [0.0, -4.0]])
W2, dup = convert_layer(W)
print(W2, "duplicated inputs:", dup)
x = np.array([3.0, -5.0])
print(W @ x, W2 @ np.concatenate([x, x[dup]]))

# ## Whole networks
#
# A sign_shift quantized MLP has zero weights; conversion duplicates the
# features feeding each affected column, back to a gather on the input when
# needed.

# In[3]:

q = S.quantizer("sign_shift", 3, exponent_bias=-2)
spec = S.NetworkSpec((6,), (S.linear(6, 5, weight=q), S.relu(), S.linear(5, 3, weight=q)))
shift = shift_network_from(Network(spec, seed=4, dtype=np.float64)).eval()
dense = convert_network(shift)
print("zero fraction:", float(np.mean(shift.weight(0) == 0)))
print([l.kind for l in dense.spec.layers])
print("zero free:", is_zero_free(dense))
print(verify_equivalence(shift, dense))
