"""Worker-thread cap shared by the BLAS/LAPACK pools and the solve pool."""
from contextlib import contextmanager, nullcontext

from threadpoolctl import threadpool_limits


@contextmanager
def limit_threads(n):
    """Limit native thread pools to ``n`` workers; ``None`` leaves them alone."""
    with (threadpool_limits(limits=n) if n else nullcontext()):
        yield
