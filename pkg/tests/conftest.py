# Pin BLAS to one thread before numpy loads anywhere; timing-sensitive tests
# assume a single core and multi-threaded BLAS only adds variance here.
import os

for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")
