"""Seeded synthetic data and headerless CSV point files.

Randomness comes from numpy's Philox counter-based bit generator, whose
output stream is fixed by the key and does not depend on platform or
numpy version. Normal deviates are produced by the inverse CDF of uniforms
(``scipy.special.ndtri``) instead of numpy's ziggurat, so generated data
is reproducible bit for bit.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .kde import as_points
from .kernels import ParameterError

__all__ = [
    "make_rng",
    "task_rng",
    "std_normal",
    "GeneratorSpec",
    "generate",
    "read_csv",
    "write_csv",
    "CSVParseError",
]

log = logging.getLogger(__name__)


class CSVParseError(ValueError):
    """A point file could not be parsed; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def make_rng(seed) -> np.random.Generator:
    """Philox-backed generator for an integer seed (or a SeedSequence)."""
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


def task_rng(seed, *task: int) -> np.random.Generator:
    """Independent stream for task ``task`` under master ``seed``.

    The stream depends only on (seed, task), never on scheduling order.
    """
    entropy = 0 if seed is None else seed
    return make_rng(np.random.SeedSequence(entropy, spawn_key=tuple(int(t) for t in task)))


def std_normal(rng: np.random.Generator, size) -> np.ndarray:
    """Standard normal draws by inverting the normal CDF at open-interval uniforms."""
    u = rng.random(size)
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return ndtri(u)


@dataclass
class GeneratorSpec:
    """Synthetic data recipe.

    ``kind`` is ``"mixture1d"`` or ``"moons2d"``. Mixture fields are used by
    the former, moon fields by the latter. For moons, ``n`` is ignored and
    the total is ``2 * n_per_moon``.
    """

    kind: str = "mixture1d"
    n: int = 600
    seed: int = 0
    weights: list = field(default_factory=lambda: [4 / 7, 2 / 7, 1 / 7])
    means: list = field(default_factory=lambda: [0.0, 3.5, 7.0])
    sds: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    n_per_moon: int = 300
    radius: float = 1.0
    noise_sd: float = 0.1
    separation: list = field(default_factory=lambda: [1.0, 0.5])

    def validate(self) -> None:
        if self.kind not in ("mixture1d", "moons2d"):
            raise ParameterError(f"unknown generator kind {self.kind!r}")
        if self.kind == "mixture1d":
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ParameterError(f"mixture weights must lie on the simplex, got {self.weights}")
            if len(self.means) != w.size or len(self.sds) != w.size:
                raise ParameterError("weights, means and sds must have equal length")
            if any(s <= 0 for s in self.sds):
                raise ParameterError("component sds must be positive")
            if self.n < 1:
                raise ParameterError("n must be at least 1")
        else:
            if self.n_per_moon < 1:
                raise ParameterError("n_per_moon must be at least 1")
            if self.noise_sd < 0:
                raise ParameterError("noise_sd must be nonnegative")
            if self.radius <= 0:
                raise ParameterError("radius must be positive")
            if len(self.separation) != 2:
                raise ParameterError("separation is a 2-vector offset of the lower moon")

    @classmethod
    def from_json(cls, text: str) -> "GeneratorSpec":
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParameterError(f"invalid generator JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ParameterError("generator config must be a JSON object")
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown generator fields: {sorted(unknown)}")
        spec = cls(**raw)
        spec.validate()
        return spec

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _mixture(spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(spec.weights, dtype=float)
    cum = np.cumsum(w)
    cum[-1] = 1.0
    comp = np.searchsorted(cum, rng.random(spec.n), side="right")
    z = std_normal(rng, spec.n)
    return (np.asarray(spec.means)[comp] + np.asarray(spec.sds)[comp] * z).reshape(-1, 1)


def _moons(spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    m = spec.n_per_moon
    theta = np.pi * rng.random(2 * m)
    r = spec.radius
    upper = np.column_stack([r * np.cos(theta[:m]), r * np.sin(theta[:m])])
    dx, dy = spec.separation
    lower = np.column_stack([dx - r * np.cos(theta[m:]), dy - r * np.sin(theta[m:])])
    pts = np.vstack([upper, lower])
    if spec.noise_sd > 0:
        pts = pts + spec.noise_sd * std_normal(rng, pts.shape)
    return pts


def generate(spec: GeneratorSpec) -> np.ndarray:
    """Draw the point set described by ``spec``; deterministic given its seed."""
    spec.validate()
    rng = make_rng(spec.seed)
    if spec.kind == "mixture1d":
        return _mixture(spec, rng)
    return _moons(spec, rng)


def write_csv(points, path) -> None:
    """Write one point per row, comma separated, LF line endings, no header.

    ``repr`` formatting round-trips every float exactly.
    """
    pts = as_points(points)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        for row in pts:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_csv(path) -> np.ndarray:
    """Read a headerless point CSV into an (n, d) array.

    Lines starting with ``#`` are skipped so files written by the CLI, which
    carry a metadata comment, read back directly.
    """
    rows = []
    dim = None
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(",")
        try:
            row = [float(f) for f in fields]
        except ValueError as exc:
            raise CSVParseError(f"non-numeric field in {line!r}", lineno) from exc
        if dim is None:
            dim = len(row)
        elif len(row) != dim:
            raise CSVParseError(f"expected {dim} fields, found {len(row)}", lineno)
        if not all(np.isfinite(row)):
            raise CSVParseError("non-finite coordinate", lineno)
        rows.append(row)
    if not rows:
        raise CSVParseError(f"{path} contains no points")
    return np.asarray(rows, dtype=float)
