"""Shared domain types, configuration and deterministic randomness.

Images are 2-D grayscale intensity grids stored as float64 on the 8-bit
convention (nominal range 0..255, peak 255 for PSNR).  Everything here is
immutable after construction and safe to share across workers; `Rng`
instances are single-owner and split per work unit.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np


class NlcsError(Exception):
    """Base class for all package errors."""


class ConfigError(NlcsError):
    """Invalid or inconsistent configuration."""


class OperatorMismatchError(NlcsError):
    """Measurement metadata does not match the supplied operator."""


class RankDeficiencyError(NlcsError):
    """Exact data solve requested for an underdetermined block system."""


class AggregationError(NlcsError):
    """Processed group matrices do not match the group plan."""


class ContractViolationError(NlcsError):
    """A caller-supplied argument violates an operator precondition."""


class DivergenceError(NlcsError):
    """Non-finite values appeared during iteration."""

    def __init__(self, iteration: int, message: str = ""):
        self.iteration = iteration
        super().__init__(message or f"non-finite values at iteration {iteration}")


class GmmTrainingError(NlcsError):
    """EM training failed (persistently empty component)."""


class PgmParseError(NlcsError):
    """Malformed PGM file; `offset` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


@dataclass(frozen=True)
class Image:
    """2-D grayscale image, row-major float64 intensities on the 0..255 scale.

    Values may drift outside [0, 255] during iterative processing; they are
    clamped only on 8-bit output.  All values must be finite.
    """

    array: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.array, dtype=np.float64)
        if a.ndim != 2:
            raise ConfigError(f"image must be 2-D, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ConfigError("image contains non-finite values")
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        object.__setattr__(self, "array", a)

    @property
    def height(self) -> int:
        return self.array.shape[0]

    @property
    def width(self) -> int:
        return self.array.shape[1]

    def to_bytes_image(self) -> np.ndarray:
        """Clamp to [0, 255] and round to uint8."""
        return np.clip(np.rint(self.array), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class Patch:
    """A square patch: `side`**2 vectorized values plus its top-left origin."""

    side: int
    values: np.ndarray  # length side**2, row-major
    origin: tuple[int, int]  # (row, col)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size != self.side * self.side:
            raise ConfigError(
                f"patch values length {v.size} != side^2 = {self.side ** 2}"
            )
        object.__setattr__(self, "values", v)


def extract_patch(img: Image, origin: tuple[int, int], side: int) -> Patch:
    r, c = origin
    if r < 0 or c < 0 or r + side > img.height or c + side > img.width:
        raise ConfigError(f"patch at {origin} side {side} outside image bounds")
    block = img.array[r : r + side, c : c + side]
    return Patch(side=side, values=block.ravel(), origin=(r, c))


REGULARIZERS = ("gsr", "gsrc", "hsse", "nlr", "rrc", "lrgsc", "trunc")

# Tuned per-regularizer weights (applied by SolverConfig.for_regularizer).
# Group modeling runs on unit-scaled intensities, so these are calibrated
# for group matrices divided by 255.
REGULARIZER_DEFAULTS: dict[str, dict[str, float]] = {
    "gsr": {"lam": 0.08},
    "gsrc": {"lam": 0.04},
    "hsse": {"lam": 0.04, "tau": 0.02, "rho": 1.0},
    "nlr": {"lam": 1.0, "k_wnnm": 2.8},
    "rrc": {"lam": 0.05},
    "lrgsc": {"lam": 0.04, "tau": 0.1, "rho": 1.0},
    "trunc": {"tau": 8.0},
}

# Dataclass attribute -> configuration file key.  `lambda` is a Python
# keyword, hence the one special case.
_CONFIG_KEYS = {
    "block_size": "block_size",
    "sampling_rate": "sampling_rate",
    "patch_side": "patch_side",
    "group_size": "group_size",
    "search_window": "search_window",
    "patch_stride": "patch_stride",
    "outer_iters": "outer_iters",
    "inner_iters": "inner_iters",
    "mu": "mu",
    "lam": "lambda",
    "rho": "rho",
    "tau": "tau",
    "eta": "eta",
    "h": "h",
    "k_wnnm": "k_wnnm",
    "eps_wnnm": "eps_wnnm",
    "regularizer": "regularizer",
    "seed": "seed",
    "match_every": "match_every",
    "stop_tol": "stop_tol",
    "lambda_decay": "lambda_decay",
}

_INT_FIELDS = {
    "block_size",
    "patch_side",
    "group_size",
    "search_window",
    "patch_stride",
    "outer_iters",
    "inner_iters",
    "seed",
    "match_every",
}


@dataclass(frozen=True)
class SolverConfig:
    """Every hyperparameter of the outer loop and the chosen regularizer.

    `eta=None` means "auto": the solver resolves it from the measurements
    (see solver module).  `inner_iters=0` means the per-regularizer default
    alternation count.  All weights are nonnegative.
    """

    block_size: int = 32
    sampling_rate: float = 0.1
    patch_side: int = 8
    group_size: int = 60
    search_window: int = 40
    patch_stride: int = 4
    outer_iters: int = 60
    inner_iters: int = 0
    mu: float = 1.0
    lam: float = 0.04
    rho: float = 1.0
    tau: float = 0.1
    eta: float | None = None
    h: float = 0.5
    k_wnnm: float = 2.8
    eps_wnnm: float = 1e-6
    regularizer: str = "gsrc"
    seed: int = 0
    match_every: int = 1
    stop_tol: float = 0.0
    lambda_decay: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.sampling_rate <= 1.0):
            raise ConfigError(f"sampling_rate must be in (0,1], got {self.sampling_rate}")
        if self.group_size < 1:
            raise ConfigError("group_size must be >= 1")
        if self.patch_side > self.block_size:
            raise ConfigError("patch_side must be <= block_size")
        if self.search_window < self.patch_side:
            raise ConfigError("search_window must be >= patch_side")
        if self.patch_stride < 1 or self.patch_side < 1 or self.block_size < 1:
            raise ConfigError("sizes and strides must be positive")
        if self.regularizer not in REGULARIZERS:
            raise ConfigError(
                f"unknown regularizer {self.regularizer!r}; expected one of {REGULARIZERS}"
            )
        for name in ("mu", "lam", "rho", "tau", "h", "k_wnnm", "stop_tol"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.eta is not None and self.eta < 0:
            raise ConfigError("eta must be >= 0 (or None for auto)")
        if self.eps_wnnm <= 0:
            raise ConfigError("eps_wnnm must be > 0")
        if self.outer_iters < 1 or self.match_every < 1:
            raise ConfigError("outer_iters and match_every must be >= 1")
        if self.inner_iters < 0:
            raise ConfigError("inner_iters must be >= 0 (0 = per-regularizer default)")

    @classmethod
    def for_regularizer(cls, regularizer: str, **overrides) -> "SolverConfig":
        """Config with the tuned default weights for one regularizer."""
        if regularizer not in REGULARIZERS:
            raise ConfigError(f"unknown regularizer {regularizer!r}")
        params = dict(REGULARIZER_DEFAULTS.get(regularizer, {}))
        params["regularizer"] = regularizer
        params.update(overrides)
        return cls(**params)

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)

    def to_text(self) -> str:
        """Serialize as `key = value` lines (UTF-8, `#` comments allowed)."""
        lines = []
        for f in fields(self):
            key = _CONFIG_KEYS[f.name]
            val = getattr(self, f.name)
            if f.name == "eta" and val is None:
                text = "auto"
            elif f.name in _INT_FIELDS:
                text = str(int(val))
            elif f.name == "regularizer":
                text = val
            else:
                text = repr(float(val))
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SolverConfig":
        return cls(**parse_config_text(text))


def parse_config_text(text: str) -> dict:
    """Parse `key = value` lines into SolverConfig keyword arguments.

    Unknown keys raise ConfigError; blank lines and `#` comments are skipped.
    """
    key_to_attr = {v: k for k, v in _CONFIG_KEYS.items()}
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in key_to_attr:
            raise ConfigError(f"line {lineno}: unknown configuration key {key!r}")
        attr = key_to_attr[key]
        if attr == "regularizer":
            out[attr] = value
        elif attr == "eta" and value == "auto":
            out[attr] = None
        elif attr in _INT_FIELDS:
            out[attr] = int(value)
        else:
            out[attr] = float(value)
    return out


class Rng:
    """Deterministic counter-based generator with derivable sub-streams.

    Same seed gives a bit-identical stream.  Sub-streams derived from
    (seed, index) are statistically independent and may be consumed in
    parallel work units.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(
            np.random.Philox(key=np.array([self.seed, self.stream], dtype=np.uint64))
        )

    def substream(self, index: int) -> "Rng":
        """Independent generator for work unit `index` under the same seed."""
        return Rng(self.seed, stream=index + 1)

    def standard_normal(self, n: int) -> np.ndarray:
        return self._gen.standard_normal(int(n))

    def uniform(self, n: int) -> np.ndarray:
        return self._gen.random(int(n))

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        return self._gen.integers(low, high, size=int(n))

    def shuffle(self, x: np.ndarray) -> None:
        self._gen.shuffle(x)


def gaussian_draws(rng: Rng, n: int) -> np.ndarray:
    """n standard-normal draws; deterministic for a fixed generator state."""
    if n < 0:
        raise ContractViolationError("n must be >= 0")
    return rng.standard_normal(n)


def derive_cell_seed(seed: int, *labels) -> int:
    """Stable per-cell seed: seed XOR a hash of the labels.

    Used by the benchmark driver so (image, rate, regularizer) cells get
    independent but reproducible streams.
    """
    import hashlib

    tag = "\x1f".join(str(x) for x in labels).encode("utf-8")
    digest = hashlib.blake2b(tag, digest_size=8).digest()
    return (int(seed) ^ int.from_bytes(digest, "little")) & 0xFFFFFFFFFFFFFFFF


def psnr_peak() -> float:
    """Peak intensity used for PSNR (8-bit convention)."""
    return 255.0


def is_finite_array(a: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(a)))


def as_image(a: np.ndarray) -> Image:
    return Image(np.asarray(a, dtype=np.float64))


def mse(a: np.ndarray, b: np.ndarray) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(np.mean(d * d))


def log10_safe(x: float) -> float:
    return math.log10(x) if x > 0 else -math.inf
