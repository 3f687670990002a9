"""Experiment configuration: flat ``section.key = value`` text files.

Lines starting with ``#`` (and trailing ``# ...``) are comments. List values
are comma separated. A scalar ``cluster.bw`` is broadcast to every worker.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

from .assign import make_mechanism
from .core import ClusterConfig, ConfigError, ParseError
from .workload import WorkloadSpec

DEFAULT_BANDWIDTHS = (5e9,) * 4 + (5e8,) * 4

# key -> (parser, default); None default means "unset"
_KEYS = {
    "cluster.n": (int, 8),
    "cluster.m": (int, 128),
    "cluster.bw": ("floats", None),
    "cluster.embedding_dim": (int, 512),
    "cluster.d_tran": (int, None),
    "cluster.cache_ratio": (float, 0.08),
    "cluster.cache_capacity": (int, None),
    "cluster.alpha": (float, 1.0),
    "workload.total_embeddings": (int, 50_000),
    "workload.sample_len": (int, 26),
    "workload.zipf_s": (float, 1.05),
    "workload.iterations": (int, 200),
    "workload.seed": (int, 0),
    "workload.trace": (str, None),
    "workload.schema": (str, None),
    "experiment.mechanisms": ("strs", ["ecomix:1", "hitgreedy"]),
    "experiment.reference": (str, "hitgreedy"),
    "experiment.training_budget_s": (float, None),
    "experiment.warmup": (int, 10),
    "experiment.seed": (int, 0),
}


def parse_kv(text: str, path: str | None = None) -> dict[str, tuple[str, int]]:
    """Raw ``key -> (value, line number)``; rejects unknown and repeated keys."""
    out: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno, path)
        if key not in _KEYS:
            raise ParseError(f"unknown key {key!r}", lineno, path)
        if key in out:
            raise ParseError(f"duplicate key {key!r} (first on line {out[key][1]})", lineno, path)
        out[key] = (value, lineno)
    return out


def _convert(key: str, raw: str, lineno: int, path):
    kind = _KEYS[key][0]
    try:
        if kind == "floats":
            return [float(t) for t in raw.split(",") if t.strip()]
        if kind == "strs":
            return [t.strip() for t in raw.split(",") if t.strip()]
        return kind(raw)
    except ValueError:
        raise ParseError(f"bad value {raw!r} for {key}", lineno, path) from None


def parse_values(text: str, path: str | None = None) -> dict:
    raw = parse_kv(text, path)
    values = {k: default for k, (_, default) in _KEYS.items()}
    for key, (value, lineno) in raw.items():
        values[key] = _convert(key, value, lineno, path)
    values["_set"] = frozenset(raw)
    return values


@dataclass(frozen=True)
class ExperimentConfig:
    cluster: ClusterConfig
    workload: WorkloadSpec
    mechanisms: tuple[str, ...] = ("ecomix:1", "hitgreedy")
    reference: str = "hitgreedy"
    training_budget_s: float | None = None
    warmup: int = 10
    seed: int = 0
    trace: str | None = None
    schema: str | None = None
    cache_ratio: float | None = 0.08
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        names = tuple(make_mechanism(s, self.seed).name for s in self.mechanisms)
        if not names:
            raise ConfigError("experiment.mechanisms must list at least one mechanism")
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate mechanisms in {list(self.mechanisms)}")
        object.__setattr__(self, "mechanisms", names)
        reference = make_mechanism(self.reference, self.seed).name
        if reference not in names:
            raise ConfigError(f"reference {self.reference!r} is not among mechanisms {list(names)}")
        object.__setattr__(self, "reference", reference)
        if self.warmup < 0:
            raise ConfigError(f"warmup must be >= 0, got {self.warmup}")
        if self.trace is None and self.warmup >= self.workload.iterations:
            raise ConfigError(
                f"warmup ({self.warmup}) must be < iterations ({self.workload.iterations})"
            )
        if self.training_budget_s is not None and not self.training_budget_s > 0:
            raise ConfigError(f"training_budget_s must be > 0, got {self.training_budget_s}")

    def with_cluster(self, cluster: ClusterConfig) -> "ExperimentConfig":
        return replace(self, cluster=cluster)


def cluster_from_values(values: dict, total_embeddings: int) -> ClusterConfig:
    n = values["cluster.n"]
    if n < 1:
        raise ConfigError(f"cluster.n must be >= 1, got {n}")
    bw = values["cluster.bw"]
    if bw is None:
        bw = list(DEFAULT_BANDWIDTHS) if n == len(DEFAULT_BANDWIDTHS) else [DEFAULT_BANDWIDTHS[0]] * n
    elif len(bw) == 1:
        bw = bw * n
    elif len(bw) != n:
        raise ConfigError(f"cluster.bw lists {len(bw)} bandwidths for n={n} workers")
    capacity = values["cluster.cache_capacity"]
    ratio = None if capacity is not None else values["cluster.cache_ratio"]
    return ClusterConfig.build(
        n, values["cluster.m"], bw,
        embedding_dim=values["cluster.embedding_dim"],
        d_tran=values["cluster.d_tran"],
        cache_ratio=ratio,
        total_embeddings=total_embeddings,
        cache_capacity=capacity,
        alpha=values["cluster.alpha"],
    )


def workload_from_values(values: dict) -> WorkloadSpec:
    return WorkloadSpec(
        total_embeddings=values["workload.total_embeddings"],
        sample_len=values["workload.sample_len"],
        zipf_s=values["workload.zipf_s"],
        iterations=values["workload.iterations"],
        seed=values["workload.seed"],
    )


def load_values(path: str | Path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_values(text, str(path))


def parse_experiment(text: str, path: str | None = None) -> ExperimentConfig:
    values = parse_values(text, path)
    workload = workload_from_values(values)
    base = Path(path).parent if path else Path(".")

    def resolve(p):
        return None if p is None else str(base / p)

    return ExperimentConfig(
        cluster=cluster_from_values(values, workload.total_embeddings),
        workload=workload,
        mechanisms=tuple(values["experiment.mechanisms"]),
        reference=values["experiment.reference"],
        training_budget_s=values["experiment.training_budget_s"],
        warmup=values["experiment.warmup"],
        seed=values["experiment.seed"],
        trace=resolve(values["workload.trace"]),
        schema=resolve(values["workload.schema"]),
        cache_ratio=None if values["cluster.cache_capacity"] is not None else values["cluster.cache_ratio"],
    )


def load_experiment(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_experiment(text, str(path))
