# coding: utf-8

# # Neuron kinds side by side
#
# A task-based neuron replaces the inner product of a linear neuron with a
# learned polynomial whose coefficients become trainable weight vectors.
# This script builds one neuron of every kind, counts its parameters and
# checks its analytic gradient against finite differences.

# In[1]:

import numpy as np

from taskneuron.expr import parse_template
from taskneuron.network import NetworkSpec, build_network, count_parameters
from taskneuron.neuron import KINDS, bank_backward, bank_forward, build_bank, count_per_neuron


# A template such as 6(x⊙x)^T gives one weight vector per positive degree plus a bias.

# In[2]:

template = parse_template("2(x⊙⁴x)^T + 3(x⊙²x)^T + 6x^T")
d = 10
for kind in KINDS:
    if kind == "task_trig":
        continue
    print(f"{kind:11s}", count_per_neuron(kind, d, template if kind == "task_poly" else None))


# Forward pass on a small batch.

# In[3]:

rng = np.random.default_rng(0)
bank = build_bank("task_poly", d, 3, template, rng=rng)
X = rng.uniform(-1, 1, (4, d))
print(bank_forward(bank, X))


# Gradient check: perturb each weight by ±1e-5 and compare.

# In[4]:

dZ = rng.normal(size=(4, 3))
grads, dX = bank_backward(bank, X, dZ)
h = 1e-5
w = bank.arrays["w4"]
numeric = np.zeros_like(w)
for idx in np.ndindex(w.shape):
    old = w[idx]
    w[idx] = old + h
    up = np.sum(dZ * bank_forward(bank, X))
    w[idx] = old - h
    down = np.sum(dZ * bank_forward(bank, X))
    w[idx] = old
    numeric[idx] = (up - down) / (2 * h)
print("max abs difference:", np.abs(numeric - grads["w4"]).max())


# Network sizes use the "layers(params)" notation. On ten inputs the p1 pairing is
# a 2-1 linear network against a single task-based neuron.

# In[5]:

p1 = parse_template("6(x⊙x)^T")
print("LN 2-1 :", count_parameters(NetworkSpec("2-1", "linear"), d))
print("TN 1   :", count_parameters(NetworkSpec("1", "task_poly"), d, p1))
model = build_network(NetworkSpec("1", "task_poly"), p1, d, rng=0)
print(model.n_params)
