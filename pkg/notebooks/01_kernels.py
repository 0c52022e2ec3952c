"""Dense and CSR kernels agree; norms survive extreme scales."""

import numpy as np

from oomsvd import CsrMatrix, matmul, matvec, matvec_transposed, norm2

rng = np.random.default_rng(0)
dense = rng.standard_normal((6, 5)) * (rng.random((6, 5)) < 0.4)
csr = CsrMatrix.from_dense(dense)
v, w = rng.standard_normal(5), rng.standard_normal(6)

print("nnz:", csr.nnz)
print("A v   dense vs csr:", np.abs(matvec(dense, v) - matvec(csr, v)).max())
print("A^T w dense vs csr:", np.abs(matvec_transposed(dense, w) - matvec_transposed(csr, w)).max())
print("A^T A shape:", matmul(dense.T, dense).shape)
print("norm of [3e-200, 4e-200]:", norm2(np.array([3e-200, 4e-200])))
