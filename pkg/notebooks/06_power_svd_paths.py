"""Both decomposition paths on a matrix with a known spectrum."""

import numpy as np

from oomsvd import CsrMatrix, frobenius_error, truncated_svd

rng = np.random.default_rng(2)
q1, _ = np.linalg.qr(rng.standard_normal((80, 30)))
q2, _ = np.linalg.qr(rng.standard_normal((30, 30)))
sigma = 10.0 / 1.3 ** np.arange(30)
A = (q1 * sigma) @ q2.T

for path, data in [("dense-gram", A), ("residual-free", CsrMatrix.from_dense(A))]:
    run = truncated_svd(data, k=5, eps=1e-12, path=path, workers=2, n_b=2)
    print(f"{path:>13}: sigma={np.round(run.factors.sigma, 8)} iterations={run.report.iterations}")
    print(f"{'':>13}  rank-5 error {frobenius_error(A, run.factors):.6f} "
          f"(optimal {np.sqrt(np.sum(sigma[5:] ** 2)):.6f})")
