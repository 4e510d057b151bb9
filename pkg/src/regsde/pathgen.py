"""Sample paths on [0, 1].

Gaussian generators (Brownian, fractional, bifractional), composite drivers
``xi = R + Q`` with an explicit companion Brownian path, the stop/shift
operators, CSV I/O and the on-disk covariance-factor cache.

Randomness comes from counter-based Philox streams keyed by
``(master_seed, replication, tag)``; two different tags never share draws,
which is how independence between the parts of a composite is enforced.
"""
from __future__ import annotations

import hashlib
import io
import math
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .errors import FactorizationError, GridAlignmentError

# Largest grid for which the dense factor is built. Beyond this, fBm uses the
# (equally exact) circulant embedding.
DENSE_LIMIT = 2**12
BIFRACTIONAL_LIMIT = 2**13


@dataclass(frozen=True)
class Grid:
    n_steps: int

    @property
    def step(self) -> float:
        return 1.0 / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) / self.n_steps

    def index_of(self, t: float) -> int:
        """Nearest node index, with t clamped to [0, 1]."""
        t = min(max(float(t), 0.0), 1.0)
        return int(round(t * self.n_steps))

    def eps_steps(self, eps: float) -> int:
        """Number of grid steps in ``eps``; eps must be an exact multiple."""
        m = int(round(eps * self.n_steps))
        if m < 1 or abs(m - eps * self.n_steps) > 1e-9 or m > self.n_steps:
            raise GridAlignmentError(
                f"eps={eps!r} is not a positive multiple of the grid step 1/{self.n_steps}"
            )
        return m


def make_grid(n_steps: int) -> Grid:
    n_steps = int(n_steps)
    if n_steps < 2 or n_steps & (n_steps - 1):
        raise GridAlignmentError(
            f"grid must align with epsilon ladder (n_steps={n_steps} is not a power of two >= 2)"
        )
    return Grid(n_steps)


@dataclass
class SamplePath:
    grid: Grid
    values: np.ndarray
    label: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_steps + 1,):
            raise ValueError(
                f"path needs {self.grid.n_steps + 1} values, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("path values must be finite")

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def __call__(self, t):
        """Evaluate with the clamp X_t = X_{(t v 0) ^ 1}; linear between nodes."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        return np.interp(t, self.nodes, self.values)

    def with_values(self, values, label: str | None = None) -> "SamplePath":
        return SamplePath(self.grid, values, self.label if label is None else label, dict(self.meta))

    def __add__(self, other: "SamplePath") -> "SamplePath":
        _same_grid(self, other)
        return SamplePath(self.grid, self.values + other.values, f"{self.label}+{other.label}")

    def __sub__(self, other: "SamplePath") -> "SamplePath":
        _same_grid(self, other)
        return SamplePath(self.grid, self.values - other.values, f"{self.label}-{other.label}")

    def __mul__(self, c: float) -> "SamplePath":
        return SamplePath(self.grid, float(c) * self.values, self.label)

    __rmul__ = __mul__


def _same_grid(*paths: SamplePath) -> Grid:
    grid = paths[0].grid
    for p in paths[1:]:
        if p.grid != grid:
            raise GridAlignmentError("paths live on different grids")
    return grid


@dataclass
class CompositePath:
    """Driver ``xi = r_part + q_part`` together with its companion martingales."""

    xi: SamplePath
    r_part: SamplePath
    q_part: SamplePath
    companions: list = field(default_factory=list)

    def __post_init__(self):
        _same_grid(self.xi, self.r_part, self.q_part, *self.companions)

    @property
    def grid(self) -> Grid:
        return self.xi.grid

    @property
    def values(self) -> np.ndarray:
        return self.xi.values

    @property
    def meta(self) -> dict:
        return self.xi.meta


@dataclass
class PathEnsemble:
    master_seed: int
    paths: list

    def __len__(self):
        return len(self.paths)

    def values(self) -> np.ndarray:
        return np.stack([p.values for p in self.paths])


# --------------------------------------------------------------------------
# random streams

def stream(master_seed: int, replication: int = 0, tag: str = "") -> np.random.Generator:
    """Philox generator keyed by (master_seed, replication, tag)."""
    tag_code = zlib.crc32(tag.encode("utf-8"))
    ss = np.random.SeedSequence(
        entropy=int(master_seed) & (2**64 - 1), spawn_key=(int(replication), tag_code)
    )
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------------
# covariances

def fbm_covariance(s, t, hurst: float):
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    two_h = 2.0 * hurst
    return 0.5 * (s**two_h + t**two_h - np.abs(t - s) ** two_h)


def bifractional_covariance(s, t, h: float, k: float):
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    return 2.0**-k * ((t ** (2 * h) + s ** (2 * h)) ** k - np.abs(t - s) ** (2 * h * k))


# --------------------------------------------------------------------------
# factor cache

class FactorCache:
    """Lower Cholesky factors keyed by (generator, grid size, parameters).

    In memory always; on disk too when ``directory`` is set. The file holds
    magic bytes, a format version, the grid size, the parameters and then the
    packed row-major lower triangle as little-endian float64. Anything that
    does not match is ignored and recomputed.
    """

    MAGIC = b"RGSDCHOL"
    VERSION = 1
    _HEADER = struct.Struct("<8sIQI")

    def __init__(self, directory: str | os.PathLike | None = None):
        self.directory = Path(directory) if directory is not None else None
        self._mem: dict = {}
        self._lock = threading.Lock()

    def _file(self, name: str, n: int, params: tuple) -> Path:
        digest = hashlib.sha256(repr((name, n, params)).encode()).hexdigest()[:16]
        return self.directory / f"{name}_{n}_{digest}.chol"

    def get(self, name: str, n: int, params: tuple, build: Callable[[], np.ndarray]) -> np.ndarray:
        key = (name, n, tuple(float(p) for p in params))
        with self._lock:
            if key in self._mem:
                return self._mem[key]
            factor = None
            if self.directory is not None:
                factor = self.load(self._file(name, n, key[2]), n, key[2])
            if factor is None:
                factor = build()
                if self.directory is not None:
                    self.directory.mkdir(parents=True, exist_ok=True)
                    self.save(self._file(name, n, key[2]), factor, key[2])
            self._mem[key] = factor
            return factor

    @classmethod
    def save(cls, path, factor: np.ndarray, params: tuple) -> None:
        n = factor.shape[0]
        rows, cols = np.tril_indices(n)
        with open(path, "wb") as fh:
            fh.write(cls._HEADER.pack(cls.MAGIC, cls.VERSION, n, len(params)))
            fh.write(np.asarray(params, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(factor[rows, cols], dtype="<f8").tobytes())

    @classmethod
    def load(cls, path, n: int, params: tuple) -> np.ndarray | None:
        try:
            with open(path, "rb") as fh:
                head = fh.read(cls._HEADER.size)
                magic, version, n_file, n_par = cls._HEADER.unpack(head)
                if magic != cls.MAGIC or version != cls.VERSION or n_file != n:
                    return None
                stored = np.frombuffer(fh.read(8 * n_par), dtype="<f8")
                if n_par != len(params) or not np.array_equal(stored, np.asarray(params)):
                    return None
                packed = np.frombuffer(fh.read(), dtype="<f8")
        except (OSError, struct.error):
            return None
        if packed.size != n * (n + 1) // 2:
            return None
        factor = np.zeros((n, n))
        factor[np.tril_indices(n)] = packed
        return factor


DEFAULT_CACHE = FactorCache()


def cholesky_factor(cov: np.ndarray) -> np.ndarray:
    """Lower factor, with one diagonal jitter retry on a non-positive pivot."""
    try:
        return linalg.cholesky(cov, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    n = cov.shape[0]
    jitter = 1e-12 * np.trace(cov) / n
    try:
        return linalg.cholesky(cov + jitter * np.eye(n), lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FactorizationError(
            "covariance matrix is numerically not positive definite"
        ) from exc


# --------------------------------------------------------------------------
# generators

def gen_brownian(grid: Grid, seed: int, replication: int = 0, tag: str = "W") -> SamplePath:
    z = stream(seed, replication, tag).standard_normal(grid.n_steps)
    values = np.concatenate([[0.0], np.cumsum(z) * math.sqrt(grid.step)])
    return SamplePath(grid, values, label=tag, meta={"law": "brownian", "hurst": 0.5})


def _fgn_circulant(grid: Grid, hurst: float, rng: np.random.Generator) -> np.ndarray:
    """Exact fGn increments by circulant embedding (Davies-Harte)."""
    n = grid.n_steps
    k = np.arange(n + 1, dtype=float)
    two_h = 2.0 * hurst
    gamma = 0.5 * (np.abs(k + 1) ** two_h - 2 * k**two_h + np.abs(k - 1) ** two_h)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-10 * lam.max():
        raise FactorizationError("circulant embedding has negative eigenvalues")
    lam = np.clip(lam, 0.0, None)
    m = row.size
    w = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    z = np.fft.fft(np.sqrt(lam / m) * w)
    return z.real[:n] * grid.step**hurst


def _fbm_factor(grid: Grid, hurst: float, cache: FactorCache) -> np.ndarray:
    def build():
        t = grid.nodes[1:]
        return cholesky_factor(fbm_covariance(t[:, None], t[None, :], hurst))

    return cache.get("fbm", grid.n_steps, (hurst,), build)


def gen_fbm(
    grid: Grid,
    hurst: float,
    seed: int,
    replication: int = 0,
    tag: str = "fbm",
    method: str = "auto",
    cache: FactorCache | None = None,
) -> SamplePath:
    """Fractional Brownian motion sampled exactly on the grid nodes.

    ``method`` is ``"cholesky"``, ``"circulant"`` or ``"auto"`` (dense factor
    up to ``DENSE_LIMIT`` steps, circulant above). H = 1/2 always uses the
    cumulative-sum factor of the Brownian covariance.
    """
    if not 0.0 < hurst < 1.0:
        raise ValueError(f"hurst must lie in (0, 1), got {hurst}")
    meta = {"law": "fbm", "hurst": float(hurst)}
    if hurst == 0.5:
        path = gen_brownian(grid, seed, replication, tag)
        path.meta = meta
        return path
    if method == "auto":
        method = "cholesky" if grid.n_steps <= DENSE_LIMIT else "circulant"
    rng = stream(seed, replication, tag)
    if method == "cholesky":
        factor = _fbm_factor(grid, hurst, cache or DEFAULT_CACHE)
        values = np.concatenate([[0.0], factor @ rng.standard_normal(grid.n_steps)])
    elif method == "circulant":
        values = np.concatenate([[0.0], np.cumsum(_fgn_circulant(grid, hurst, rng))])
    else:
        raise ValueError(f"unknown fBm method {method!r}")
    return SamplePath(grid, values, label=tag, meta=meta)


def gen_bifractional(
    grid: Grid,
    h: float,
    k: float,
    seed: int,
    replication: int = 0,
    tag: str = "bifbm",
    cache: FactorCache | None = None,
) -> SamplePath:
    if not 0.0 < h < 1.0 or not 0.0 < k <= 1.0:
        raise ValueError(f"need 0 < h < 1 and 0 < k <= 1, got h={h}, k={k}")
    if grid.n_steps > BIFRACTIONAL_LIMIT:
        raise ValueError(f"bifractional sampling is dense; n_steps <= {BIFRACTIONAL_LIMIT}")

    def build():
        t = grid.nodes[1:]
        return cholesky_factor(bifractional_covariance(t[:, None], t[None, :], h, k))

    factor = (cache or DEFAULT_CACHE).get("bifbm", grid.n_steps, (h, k), build)
    z = stream(seed, replication, tag).standard_normal(grid.n_steps)
    values = np.concatenate([[0.0], factor @ z])
    return SamplePath(grid, values, label=tag, meta={"law": "bifractional", "h": h, "k": k})


# --------------------------------------------------------------------------
# composites

def _parse_spec(spec: str) -> tuple[str, list[float]]:
    name, *args = str(spec).split(":")
    return name.strip().lower(), [float(a) for a in args]


def _r_part(grid, spec, seed, replication) -> SamplePath:
    if callable(spec):
        return SamplePath(grid, spec(grid.nodes), label="R", meta={"law": "deterministic"})
    name, args = _parse_spec(spec)
    if name == "zero":
        return SamplePath(grid, np.zeros(grid.n_steps + 1), label="R", meta={"law": "deterministic"})
    if name == "fbm":
        return gen_fbm(grid, args[0], seed, replication, tag="R")
    if name == "bifractional":
        return gen_bifractional(grid, args[0], args[1], seed, replication, tag="R")
    if name == "brownian":
        return gen_brownian(grid, seed, replication, tag="R")
    if name == "t2":
        return SamplePath(grid, grid.nodes**2, label="R", meta={"law": "deterministic"})
    raise ValueError(f"unknown generator descriptor {spec!r}")


_Q_MAPS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "w": lambda t, w: w,
    "zero": lambda t, w: np.zeros_like(w),
    "sin_w": lambda t, w: np.sin(w),
    "w2": lambda t, w: w**2,
}


def gen_composite(
    grid: Grid, r_spec, q_spec, seed: int, replication: int = 0
) -> CompositePath:
    """Driver ``xi = R + Q`` with companion Brownian path W.

    ``r_spec``: ``"zero"``, ``"fbm:H"``, ``"bifractional:H:K"``, ``"brownian"``,
    ``"t2"`` or a callable of the time nodes. R is drawn from its own stream, so
    it is independent of W. ``q_spec`` names a smooth functional of W:
    ``"w"``, ``"zero"``, ``"sin_w"``, ``"w2"`` (or a callable ``(t, w)``).
    """
    if not callable(q_spec):
        key = str(q_spec).strip().lower()
        if key not in _Q_MAPS:
            raise ValueError(f"unknown generator descriptor {q_spec!r}")
        q_map = _Q_MAPS[key]
    else:
        q_map = q_spec
    r = _r_part(grid, r_spec, seed, replication)
    w = gen_brownian(grid, seed, replication, tag="W")
    q = SamplePath(grid, q_map(grid.nodes, w.values), label="Q")
    meta = {"law": "composite", "r": r.meta, "q": str(q_spec)}
    xi = SamplePath(grid, r.values + q.values, label="xi", meta=meta)
    return CompositePath(xi=xi, r_part=r, q_part=q, companions=[w])


def gen_ensemble(
    generator: Callable[[int], object], n_rep: int, master_seed: int, workers: int = 1
) -> PathEnsemble:
    """Fill an ensemble; ``generator(replication)`` must be a pure function."""
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(generator, range(n_rep)))
    else:
        paths = [generator(k) for k in range(n_rep)]
    return PathEnsemble(master_seed, paths)


# --------------------------------------------------------------------------
# stop / shift

def stop_path(x: SamplePath, tau: float) -> SamplePath:
    k = x.grid.index_of(tau)
    values = x.values.copy()
    values[k:] = values[k]
    return x.with_values(values, f"{x.label}^tau")


def shift_path(x: SamplePath, tau: float) -> SamplePath:
    k = x.grid.index_of(tau)
    n = x.grid.n_steps
    idx = np.minimum(np.arange(n + 1) + k, n)
    return x.with_values(x.values[idx], f"{x.label}(tau+.)")


# --------------------------------------------------------------------------
# CSV

def write_path_csv(path: SamplePath, dest, header_comment: str | None = None) -> None:
    lines = []
    if header_comment:
        lines.append(f"# {header_comment}")
    lines.append("t,value")
    lines.extend(f"{t!r},{v!r}" for t, v in zip(path.nodes.tolist(), path.values.tolist()))
    text = "\n".join(lines) + "\n"
    if isinstance(dest, io.TextIOBase):
        dest.write(text)
    else:
        Path(dest).write_text(text)


def read_path_csv(src, label: str = "") -> SamplePath:
    text = Path(src).read_text() if not isinstance(src, io.TextIOBase) else src.read()
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    if rows[0].strip() != "t,value":
        raise ValueError("expected header 't,value'")
    data = np.array([[float(c) for c in r.split(",")] for r in rows[1:]])
    grid = make_grid(len(data) - 1)
    if not np.allclose(data[:, 0], grid.nodes, rtol=0, atol=1e-15):
        raise ValueError("time column is not a uniform grid of [0, 1]")
    return SamplePath(grid, data[:, 1], label=label)


def paths_on_grid(paths: Sequence[SamplePath]) -> Grid:
    return _same_grid(*paths)
