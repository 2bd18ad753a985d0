"""Short masked-autoencoder run on the toy preset."""
from lessvit.hypermae import get_preset, pretrain

cfg = get_preset("toy")
model, losses = pretrain(cfg, steps=60, seed=0)
print(f"parameters: {model.n_parameters:,}")
for step in (1, 10, 20, 40, 60):
    print(f"step {step:3d}  loss {losses[step - 1]:.4f}")
print(f"ratio final/first = {losses[-1] / losses[0]:.3f}")
