# coding: utf-8

# # Weight freezing and the low-variance initialization
#
# The freezing diagnostic is the filter-averaged cosine between a layer's
# weights at initialization and now. Quantized layers whose latents sit at
# the rounding thresholds stop moving, and the cosine stays high.

# In[1]:


from denseshift.datasets import synthetic_blobs
from denseshift.engine import Network, TrainConfig, fit
from denseshift.engine import spec as S
from denseshift.engine.models import mlp, with_auto_bias
from denseshift.freeze import CosineMonitor

data = synthetic_blobs(classes=4, dim=16, n_per_class=200, seed=0)

# In[2]:

runs = {
    "full_precision": (S.FULL_PRECISION, "kaiming"),
    "symmetric_pot": (S.quantizer("symmetric_pot", 3), "kaiming"),
    "dense_shift": (S.dense_shift(3), "low_variance"),
}
for name, (weight, init) in runs.items():
    net = Network(with_auto_bias(mlp((16, 32, 32, 4), weight)), seed=0, init=init)
    mon = CosineMonitor(net)
    fit(net, data.images, data.labels, TrainConfig(epochs=10, base_lr=0.05, batch_size=32), monitor=mon)
    print(f"{name:15s}", {k: round(v, 3) for k, v in mon.latest().items()})

# ## Initialization ablation
#
# Low-variance latents put every weight next to the sign threshold, so signs
# and shifts can flip early. Kaiming latents start far from it.

# In[3]:

for init in ("low_variance", "kaiming"):
    net = Network(with_auto_bias(mlp((16, 32, 32, 4), S.dense_shift(3))), seed=1, init=init)
    h = fit(net, data.images, data.labels, TrainConfig(epochs=5, base_lr=0.05, batch_size=32))
    acc = float((net.predict(data.images).argmax(1) == data.labels).mean())
    print(f"{init:13s} loss {h.losses[-1]:.3f} train acc {acc:.3f}")
