"""A small MLP trained from scratch, with a finite-difference gradient check."""

import numpy as np

from eauq import nn

rng = np.random.default_rng(0)
model = nn.init_mlp([2, 4, 1], seed=1)
X = rng.normal(size=(5, 2))
y = rng.integers(0, 2, 5).astype(float)

# analytic gradient against central differences on one weight
loss, grad = nn.loss_and_gradient(model, X, y)
h = 1e-5
w = [a.copy() for a in model.weights]
w[0][0, 0] += h
up = nn.loss_and_gradient(model.with_params(w, model.biases), X, y)[0]
w[0][0, 0] -= 2 * h
down = nn.loss_and_gradient(model.with_params(w, model.biases), X, y)[0]
print("dL/dw00 analytic %.8f  numeric %.8f" % (grad.weights[0][0, 0], (up - down) / (2 * h)))

# XOR needs the hidden layer
XOR = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
target = np.array([0, 1, 1, 0], dtype=float)
cfg = nn.TrainConfig(epochs=2000, initial_lr=0.5, lr_schedule="constant", weight_decay=0.0, batch_size=4)
trained, _ = nn.train(nn.init_mlp([2, 8, 1], seed=0), XOR, target, cfg)
print("XOR outputs:", np.round(nn.forward(trained, XOR), 3))

# checkpoints every 15 epochs over a 150-epoch run
cfg = nn.TrainConfig(epochs=150, initial_lr=0.1, batch_size=4, checkpoint_interval=15)
_, ckpts = nn.train(nn.init_mlp([2, 8, 1], seed=0), XOR, target, cfg)
print("checkpoint epochs:", [c.epoch for c in ckpts])

# fine-tuning schedule: 40 epochs of exponential decay
ft = nn.finetune_config(nn.TrainConfig())
print("fine-tune lr at 0, 20, 39: %.3g %.3g %.3g" % (ft.lr_at(0), ft.lr_at(20), ft.lr_at(39)))
