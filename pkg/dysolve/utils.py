import contextlib
import math
import os
import tempfile
import typing
from concurrent.futures import ThreadPoolExecutor
from contextvars import ContextVar

TV = typing.TypeVar("TV")
RV = typing.TypeVar("RV")

THREADS: ContextVar[int] = ContextVar("threads", default=os.cpu_count() or 1)
MEMORY_BUDGET: ContextVar[int] = ContextVar("memory_budget", default=2 * 1024**3)

TWO_PI = 2 * math.pi


class cached_property(typing.Generic[TV]):
    def __init__(self, func: typing.Callable[[typing.Any], TV]):
        self.__doc__ = getattr(func, "__doc__")
        self.func = func

    def __get__(self, obj, cls) -> TV:
        value = obj.__dict__[self.func.__name__] = self.func(obj)
        return value


def ghz_to_angular(value: float) -> float:
    """GHz -> rad/ns"""
    return TWO_PI * value


def angular_to_ghz(value: float) -> float:
    return value / TWO_PI


def mhz_to_angular(value: complex) -> complex:
    """MHz -> rad/ns"""
    return TWO_PI * value / 1000


def angular_to_mhz(value: complex) -> complex:
    return value * 1000 / TWO_PI


def parallel_map(
    func: typing.Callable[[TV], RV],
    items: typing.Sequence[TV],
    threads: typing.Optional[int] = None,
) -> typing.List[RV]:
    """Order-preserving map over a thread pool, numpy releases the GIL in BLAS"""
    threads = threads or THREADS.get()
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(func, items))


def chunks(total: int, size: int) -> typing.Iterator[slice]:
    size = max(1, size)
    for start in range(0, total, size):
        yield slice(start, min(total, start + size))


@contextlib.contextmanager
def atomic_write(path: str, mode: str = "wb") -> typing.Iterator[typing.IO]:
    """Write to a temp file in the target directory then rename over `path`"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode) as f:
            yield f
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
