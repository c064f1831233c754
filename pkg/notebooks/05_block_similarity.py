"""
Block similarity and the smoothness penalty
===========================================

Compare blocks with linear CKA, turn a reference pattern into a graph, and
evaluate the penalty that pulls affine blocks together.
"""

import numpy as np

from stagediff.denoiser import init_params
from stagediff.structure import (block_stack, build_affinity, offdiag_stats, similarity_matrix,
                                 sp_loss_and_grad)

params = init_params(seed=0, d=32, d_in=16, L_b=4, C=4, d_ssl=8)
S = similarity_matrix(params)
print("similarity at init:\n", S.round(3))
print("off-diagonal mean/std:", np.round(offdiag_stats(S), 4))

# Make blocks 0 and 1 share weights; their CKA becomes 1.
params.blocks[1].W.data = params.blocks[0].W.data.copy()
params.blocks[1].V.data = params.blocks[0].V.data.copy()
S = similarity_matrix(params)
print("after tying blocks 0 and 1:", round(S[0, 1], 6))

# A reference pattern with two groups of two.
S_ref = np.array([[1, .9, .1, .1], [.9, 1, .1, .1], [.1, .1, 1, .9], [.1, .1, .9, 1]])
aff = build_affinity(S_ref)
loss, grad = sp_loss_and_grad(block_stack(params), aff)
print("penalty:", round(loss, 3), " gradient norm:", round(float(np.linalg.norm(grad)), 3))
