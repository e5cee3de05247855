"""Train a tiny VQ-VAE on four Gaussian blobs and watch the codebook settle.

The encoder squashes its output with tanh, so every latent lives in [-1, 1]^2
and the k-means initialised codebook starts inside the same box. After a few
hundred epochs each code should decode to roughly one blob centre.
"""
import numpy as np

from qd_forge.vqvae import Architecture, VqVaeModel, decoded_centers, train_epochs

MEANS = np.array([[-0.5, -0.5], [-0.5, 0.5], [0.5, -0.5], [0.5, 0.5]])

rng = np.random.default_rng(1)
data = np.concatenate([m + 0.05 * rng.normal(size=(100, 2)) for m in MEANS])

arch = Architecture(input_dim=2, latent_dim=2, codebook_size=4, encoder_hidden=(16, 16),
                    decoder_hidden=(16, 16), activation="tanh", output_activation="identity")
model = VqVaeModel(arch, seed=1)
print("initial codebook (inside [-1, 1]^2):")
print(np.round(model.codebook_array, 3))

reports = train_epochs(model, data, epochs=200, batch_size=64, rng=np.random.default_rng(1))
print(f"\nloss: epoch 1 = {reports[0].total:.4f}, epoch 200 = {reports[-1].total:.4f}")
print(f"unused codebook entries at the end: {reports[-1].unused_entries}")

print("\ndecoded codebook entries vs. true blob centres:")
for c in decoded_centers(model):
    nearest = MEANS[np.argmin(((MEANS - c) ** 2).sum(1))]
    print(f"  {np.round(c, 3)}  closest mean {nearest}  distance {np.linalg.norm(c - nearest):.3f}")
