"""Language subspaces composed from one hyper-subspace.

Two language vectors pick two different subspaces; the same unit embedding
then decodes to different Gaussians. A zero language vector leaves only the
first basis and bias, i.e. a plain single-subspace model.
"""

import numpy as np

from hshmm.model import ParamLayout
from hshmm.subspace import compose_subspace, decode_unit_params

layout = ParamLayout(feature_dim=2)
rng = np.random.default_rng(3)
K, E = 2, 4
bases = 0.3 * rng.standard_normal((K + 1, layout.size, E))
biases = 0.3 * rng.standard_normal((K + 1, layout.bias_size))
embedding = rng.standard_normal((1, E))

for alpha in ([0.0, 0.0], [1.0, -0.5], [-1.0, 0.5]):
    W, b = compose_subspace(bases, biases, np.array(alpha))
    p = decode_unit_params(W, b, embedding, layout)
    print(f"alpha={alpha}: state-0 means {np.round(p.means[0, 0], 2).tolist()}, "
          f"weights {np.round(p.weights[0, 0], 3).tolist()}")

W0, b0 = compose_subspace(bases, biases, np.zeros(K))
print("zero alpha reproduces the first basis and bias:",
      np.array_equal(W0, bases[0]) and np.array_equal(b0, biases[0]))
