"""
The reverse-mode engine behind training
=======================================

Fits a tiny soft-matching problem with the tape and Adam: learn features for
five points so that row-softmax matching maps each point to a permuted
partner.
"""
import numpy as np

from rtcorr import autodiff as ad

rng = np.random.default_rng(0)
target = np.array([2, 0, 4, 1, 3])
onehot = np.eye(5)[target]

params = {"a": rng.normal(size=(5, 4)), "b": rng.normal(size=(5, 4))}
state = ad.AdamState(lr=0.05)

for step in range(301):
    with ad.Tape() as tape:
        a, b = tape.watch(ad.Tensor(params["a"])), tape.watch(ad.Tensor(params["b"]))
        pi = ad.row_softmax(ad.matmul(a, ad.transpose(b)), 1.0)
        loss = ad.mean(ad.elementwise_mul(ad.sub(pi, onehot), ad.sub(pi, onehot)))
        grads = tape.gradient(loss, [a, b])
    ad.adam_step(params, dict(zip(("a", "b"), grads)), state)
    if step % 100 == 0:
        print(f"step {step:3d}  loss {loss.item():.5f}  argmax {pi.value.argmax(axis=1)}")

print("target          ", target)
