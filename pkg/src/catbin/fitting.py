"""Options, reports and the category-parallel driver shared by both CAVI engines."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

# Categories are always processed in blocks of this size, whatever the worker
# count, so every BLAS call sees the same shapes and results are bit-stable.
CATEGORY_BLOCK = 32


@dataclass
class FitOptions:
    max_iters: int = 100
    elbo_drop_tol: float = 0.1  # on the ELBO divided by N*K
    workers: int = 1
    compute_elbo: bool = True
    ridge: float = 0.0  # added to the posterior precision on request only

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


@dataclass
class FitReport:
    elbo_trace: List[float] = field(default_factory=list)
    n_iters: int = 0
    converged: bool = False
    iter_seconds: List[float] = field(default_factory=list)

    def normalized_elbo(self, N: int, K: int) -> float:
        return self.elbo_trace[-1] / (N * K) if self.elbo_trace else float("nan")


def category_blocks(K: int) -> List[slice]:
    return [slice(a, min(a + CATEGORY_BLOCK, K)) for a in range(0, K, CATEGORY_BLOCK)]


def run_blocks(fn: Callable[[slice], object], K: int, workers: int) -> Sequence[object]:
    """Apply ``fn`` to each fixed category block, in order."""
    blocks = category_blocks(K)
    if workers <= 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, blocks))


def converged(trace: Sequence[float], N: int, K: int, tol: float) -> bool:
    if len(trace) < 2:
        return False
    return (trace[-1] - trace[-2]) / (N * K) < tol
