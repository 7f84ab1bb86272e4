"""Verify the whole model's gradients against central finite differences.

Every trainable tensor in a tiny double-precision model is perturbed
coordinate by coordinate; the tape's gradient must agree with
(f(p+eps) - f(p-eps)) / 2eps to a relative error below 1e-4. This is the
same machinery as `tdvit gradcheck`, here driven as a library.
"""

import numpy as np

from tdvit.gradcheck import finite_difference_check
from tdvit.model import ModelConfig, Tensor, bce_with_logits, forward_logits, init_weights

rng = np.random.default_rng(0)
frames = rng.random((1, 2, 8, 8, 1))
times = np.cumsum(rng.uniform(1, 8, size=(1, 2)), axis=1)
labels = np.array([1.0])

for mode in ("positional", "te", "ta"):
    config = ModelConfig(
        dim=8, heads=2, depth=1, head_dim=4, mlp_hidden=32, patch_size=4,
        mode=mode, frame_h=8, frame_w=8, channels=1, decoder_depth=1,
        precision="double",
    )
    params = init_weights(config, 7)
    params.classifier = Tensor(rng.normal(size=(8, 1)) * 0.3, requires_grad=True)

    def loss(_):
        return bce_with_logits(forward_logits(params, config, frames, times), labels)

    tensors = [t for n, t in params.named().items()
               if not (n.startswith("decoder") or n in ("mask_token", "decoder_pred"))]
    err = finite_difference_check(loss, tensors)
    n_coords = sum(t.size for t in tensors)
    print(f"mode {mode:10s}: {n_coords:4d} coordinates, max relative error {err:.2e}")
