"""The exploration signals on hand-made inputs."""

import numpy as np

from umbrl.explore import EmaNormalizer, knn_entropy, lbs_reward, p2e_reward

rng = np.random.default_rng(0)

# particle entropy: a query far from the crowd scores higher than one inside it
crowd = rng.normal(size=(64, 3)) * 0.1
print("kNN entropy, inside crowd:", round(knn_entropy(np.zeros(3), crowd, 12), 3))
print("kNN entropy, far outside: ", round(knn_entropy(np.full(3, 2.0), crowd, 12), 3))

# ensemble disagreement is zero exactly when every member agrees
agree = np.tile(rng.normal(size=(1, 5, 4)), (4, 1, 1))
disagree = agree.copy()
disagree[2, 3] += 0.5
print("P2E agree:", p2e_reward(agree), "\nP2E one member off at t=3:", np.round(p2e_reward(disagree), 4))

# latent surprise: KL between posterior and prior per categorical
post = np.array([[[0.9, 0.1], [0.5, 0.5]]])
prior = np.array([[[0.5, 0.5], [0.5, 0.5]]])
print("LBS surprise:", np.round(lbs_reward(post, prior), 4))

# the running normalizer maps a constant stream to 1
norm = EmaNormalizer()
for _ in range(200):
    out = norm(np.full(4, 7.0))
print("normalized constant after 200 batches:", np.round(out, 4))
