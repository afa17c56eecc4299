"""Monte Carlo experiments: error rates of the testers, moment checks for the
tiled block construction, and the labeled-versus-pooled contrast."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.stats import binomtest

from .closeness import DEFAULT_CLOSENESS_ALPHA, ClosenessParams, test_closeness_l1
from .core import (
    DistributionSequence,
    ProbabilityVector,
    RngSeed,
    ValidationError,
    draw_batch,
)
from .identity import build_reduction, test_identity
from .instances import (
    BlockParams,
    expected_block_collisions,
    gen_c1_pair,
    gen_paired_bias,
    gen_pooled_lb_pair,
    leading_block_covariance,
    sequence_collision_moments,
    split_heterogeneous,
)
from .io import read_sequence
from .pooled import collision_vectors_rowwise, fingerprint, pool_poissonized, test_identity_poissonized
from .uniformity import DEFAULT_ALPHA, UniformityParams, collision_statistic_z, test_uniformity

TESTERS = ("uniformity", "identity", "identity-poisson", "closeness")
CSV_COLUMNS = [
    "T", "trials", "type1", "type1_lo", "type1_hi", "type2", "type2_lo", "type2_hi",
    "mean_stat", "mean_threshold", "seconds",
]
NULL, ALT = 0, 1


def wilson_interval(successes: int, n: int, confidence: float = 0.95, alternative: str = "two-sided"):
    """Wilson score interval for a binomial proportion.

    ``alternative="less"`` gives the one-sided interval ``(0, upper)``.
    """
    if n < 1:
        raise ValidationError("need at least one trial")
    ci = binomtest(int(successes), int(n), alternative=alternative).proportion_ci(
        confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


# ---------------------------------------------------------------------------
# Instance specs
# ---------------------------------------------------------------------------


def build_distribution(spec: dict, k: int) -> ProbabilityVector:
    kind = spec.get("kind")
    if kind == "uniform":
        return ProbabilityVector.uniform(k)
    if kind == "paired-bias":
        return gen_paired_bias(k, float(spec["epsilon"]))
    if kind == "file":
        seq = read_sequence(spec["path"], exact=bool(spec.get("exact", False)))
        if seq.T != 1:
            raise ValidationError("a reference file must hold exactly one row")
        return seq[0]
    raise ValidationError(f"unknown distribution kind {kind!r}")


class Instance:
    """Per-arm sample source: ``sample(T, c, gen)`` for labeled batches and
    ``pool(T, c_mean, gen)`` for Poissonized pooled samples."""

    def __init__(self, spec: dict, k: int):
        self.spec = dict(spec)
        self.k = k
        kind = spec.get("kind")
        self._c1 = None
        self._fixed: DistributionSequence | None = None
        self._base = None
        if kind in ("c1-D1", "c1-D2"):
            self._c1 = kind[-2:]
        elif kind in ("pooled-lb-a", "pooled-lb-b"):
            params = BlockParams(int(spec.get("m", 64)), int(spec.get("n_blocks", 64)))
            a, b = gen_pooled_lb_pair(params)
            self._fixed = a if kind.endswith("a") else b
        elif kind == "sequence-file":
            self._fixed = read_sequence(spec["path"])
        else:
            self._base = build_distribution(spec, k)
        if self._fixed is not None and self._fixed.k != k:
            raise ValidationError(f"instance has k={self._fixed.k}, experiment has k={k}")

    def sequence(self, T: int) -> DistributionSequence:
        if self._fixed is not None:
            if self._fixed.T != T:
                raise ValidationError(f"instance {self.spec['kind']} has fixed T={self._fixed.T}")
            return self._fixed
        if self._base is None:
            raise ValidationError(f"instance {self.spec['kind']} has no explicit sequence")
        if self.spec.get("heterogeneous"):
            if T % 2:
                raise ValidationError("heterogeneous instances need an even T")
            return DistributionSequence.cycle(split_heterogeneous(self._base), T)
        return DistributionSequence.repeat(self._base, T)

    def _c1_instance(self, T: int):
        d1, d2 = gen_c1_pair(self.k, T)
        if d1.k != self.k:
            raise ValidationError("c1 instances need k to be a power of two")
        return d1 if self._c1 == "D1" else d2

    def sample(self, T: int, c: int, gen: np.random.Generator):
        if self._c1:
            return self._c1_instance(T).sample(c, gen)
        return draw_batch(self.sequence(T), c, gen)

    def pool(self, T: int, c_mean: float, gen: np.random.Generator) -> np.ndarray:
        if self._c1:
            return self._c1_instance(T).sample_poisson(c_mean, gen)
        return pool_poissonized(self.sequence(T), c_mean, gen)


@dataclass(frozen=True)
class ExperimentSpec:
    tester: str
    k: int
    epsilon: float
    null: dict
    alt: dict
    trials: int
    seed: int
    T: tuple[int, ...]
    alpha: float | None = None
    reference: dict | None = None
    c_mean: float = 1.0

    def __post_init__(self):
        if self.tester not in TESTERS:
            raise ValidationError(f"unknown tester {self.tester!r}; expected one of {TESTERS}")
        if self.trials < 1:
            raise ValidationError("trials must be at least 1")
        if not self.T or any(b <= a for a, b in zip(self.T, self.T[1:])):
            raise ValidationError("the T schedule must be non-empty and strictly increasing")
        if min(self.T) < 2:
            raise ValidationError("every T must be at least 2")
        if self.tester in ("identity", "identity-poisson") and self.reference is None:
            raise ValidationError(f"tester {self.tester!r} needs a reference")
        if self.tester == "closeness":
            for arm in (self.null, self.alt):
                if set(arm) != {"p", "q"}:
                    raise ValidationError("closeness arms must be objects with keys 'p' and 'q'")
        self.params()  # validates k / epsilon / alpha

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentSpec":
        try:
            return cls(
                tester=str(doc["tester"]),
                k=int(doc["k"]),
                epsilon=float(doc["epsilon"]),
                null=dict(doc["null"]),
                alt=dict(doc["alt"]),
                trials=int(doc["trials"]),
                seed=int(doc["seed"]),
                T=tuple(int(t) for t in doc["T"]),
                alpha=None if doc.get("alpha") is None else float(doc["alpha"]),
                reference=doc.get("reference"),
                c_mean=float(doc.get("c_mean", 1.0)),
            )
        except KeyError as exc:
            raise ValidationError(f"experiment spec is missing {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"malformed experiment spec: {exc}") from None

    @classmethod
    def from_json(cls, path) -> "ExperimentSpec":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["T"] = list(self.T)
        return out

    def params(self):
        if self.tester == "closeness":
            return ClosenessParams(self.k, self.epsilon, self.alpha or DEFAULT_CLOSENESS_ALPHA)
        return UniformityParams(self.k, self.epsilon, self.alpha or DEFAULT_ALPHA)


def trial_seed(spec: ExperimentSpec, t_index: int, trial: int, arm: int) -> RngSeed:
    """Seed of one trial; independent of scheduling and worker count."""
    return RngSeed(spec.seed, (t_index, trial, arm))


class _Runner:
    """Builds instances once per process and runs single trials."""

    def __init__(self, spec: ExperimentSpec):
        self.spec = spec
        k = spec.k
        if spec.tester == "closeness":
            self.arms = [(Instance(a["p"], k), Instance(a["q"], k)) for a in (spec.null, spec.alt)]
        else:
            self.arms = [Instance(spec.null, k), Instance(spec.alt, k)]
        self.reduction = None
        if spec.reference is not None and spec.tester in ("identity", "identity-poisson"):
            self.reduction = build_reduction(build_distribution(spec.reference, k))

    def run(self, t_index: int, trial: int, arm: int):
        spec = self.spec
        T = spec.T[t_index]
        gen = trial_seed(spec, t_index, trial, arm).generator()
        alpha = spec.alpha
        start = time.perf_counter()
        if spec.tester == "uniformity":
            batch = self.arms[arm].sample(T, 2, gen)
            v = test_uniformity(batch, spec.params())
        elif spec.tester == "identity":
            batch = self.arms[arm].sample(T, 2, gen)
            v = test_identity(batch, self.reduction, spec.epsilon, gen, alpha or DEFAULT_ALPHA)
        elif spec.tester == "identity-poisson":
            pooled = self.arms[arm].pool(T, spec.c_mean, gen)
            v = test_identity_poissonized(pooled, self.reduction, spec.epsilon, gen, alpha or DEFAULT_ALPHA)
        else:
            p_inst, q_inst = self.arms[arm]
            batch_p = p_inst.sample(T, 3, gen)
            batch_q = q_inst.sample(T, 3, gen)
            v = test_closeness_l1(batch_p, batch_q, spec.params(), gen)
        return bool(v.rejected), float(v.statistic), float(v.threshold), time.perf_counter() - start


_WORKER: _Runner | None = None


def _init_worker(spec_dict: dict):
    global _WORKER
    _WORKER = _Runner(ExperimentSpec.from_dict(spec_dict))


def _run_task(task):
    return task, _WORKER.run(*task)


@dataclass(frozen=True)
class ErrorRow:
    T: int
    trials: int
    type1: float
    type1_lo: float
    type1_hi: float
    type2: float
    type2_lo: float
    type2_hi: float
    mean_stat: float
    mean_threshold: float
    seconds: float
    null_rejections: int = field(default=0, compare=False)
    alt_rejections: int = field(default=0, compare=False)

    def csv_values(self) -> list:
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass(frozen=True)
class ErrorReport:
    spec: ExperimentSpec
    rows: tuple[ErrorRow, ...]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in self.rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row.csv_values()])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    def upper_bounds(self, confidence: float = 0.95) -> list[tuple[float, float]]:
        """One-sided Wilson upper bounds ``(type1, type2)`` for every row."""
        out = []
        for row in self.rows:
            n = row.trials
            u1 = wilson_interval(row.null_rejections, n, confidence, "less")[1]
            u2 = wilson_interval(n - row.alt_rejections, n, confidence, "less")[1]
            out.append((u1, u2))
        return out


def aggregate(spec: ExperimentSpec, records: dict, timing: bool = True) -> ErrorReport:
    """Fold ``{(t_index, trial, arm): record}`` in index order."""
    rows = []
    n = spec.trials
    for ti, T in enumerate(spec.T):
        null = [records[(ti, i, NULL)] for i in range(n)]
        alt = [records[(ti, i, ALT)] for i in range(n)]
        rej0 = sum(r[0] for r in null)
        rej1 = sum(r[0] for r in alt)
        lo1, hi1 = wilson_interval(rej0, n)
        lo2, hi2 = wilson_interval(n - rej1, n)
        seconds = math.fsum(r[3] for r in null + alt) if timing else 0.0
        rows.append(ErrorRow(
            T=T, trials=n,
            type1=rej0 / n, type1_lo=lo1, type1_hi=hi1,
            type2=(n - rej1) / n, type2_lo=lo2, type2_hi=hi2,
            mean_stat=math.fsum(r[1] for r in null) / n,
            mean_threshold=math.fsum(r[2] for r in null) / n,
            seconds=round(seconds, 6),
            null_rejections=rej0, alt_rejections=rej1,
        ))
    return ErrorReport(spec, tuple(rows))


def run_trials(spec: ExperimentSpec, workers: int = 1, timing: bool = True) -> ErrorReport:
    """Type-I (null arm rejects) and type-II (alternative arm accepts) rates per T.

    ``mean_stat`` and ``mean_threshold`` are averaged over null-arm trials.
    With ``timing=False`` the ``seconds`` column is zero so reports are
    byte-identical across runs.
    """
    tasks = [(ti, i, arm) for ti in range(len(spec.T)) for i in range(spec.trials) for arm in (NULL, ALT)]
    records = {}
    if workers <= 1:
        runner = _Runner(spec)
        for task in tasks:
            records[task] = runner.run(*task)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker,
                                 initargs=(spec.to_dict(),)) as pool:
            for task, rec in pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * workers))):
                records[task] = rec
    return aggregate(spec, records, timing=timing)


# ---------------------------------------------------------------------------
# Moments of the tiled construction
# ---------------------------------------------------------------------------


def _collision_samples(seq: DistributionSequence, trials: int, gen, chunk: int = 500):
    """Per-trial pooled samples (two draws per source), chunked, as ``(trials, 2T)`` blocks."""
    done = 0
    while done < trials:
        size = min(chunk, trials - done)
        draws = draw_batch(seq, 2 * size, gen).draws  # T x 2*size
        yield draws.reshape(seq.T, size, 2).transpose(1, 0, 2).reshape(size, -1)
        done += size


@dataclass
class MomentReport:
    params: BlockParams
    trials: int
    expected_mean: np.ndarray
    mean_a: np.ndarray
    mean_b: np.ndarray
    z_a: np.ndarray
    z_b: np.ndarray
    z_diff: np.ndarray
    cov_a: np.ndarray
    cov_b: np.ndarray
    cov_a_exact: np.ndarray
    cov_b_exact: np.ndarray
    cov_leading: np.ndarray
    r_block_c3: int
    r_block_c4: int

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for key, value in self.__dict__.items():
            if isinstance(value, np.ndarray):
                out[key] = value.tolist()
            elif isinstance(value, BlockParams):
                out[key] = asdict(value)
            else:
                out[key] = value
        return out


def verify_moments(params: BlockParams, trials: int, rng=0) -> MomentReport:
    """Empirical collision-vector moments of ``a`` and ``b`` against exact values."""
    if trials < 2:
        raise ValidationError("need at least two trials")
    seed = rng if isinstance(rng, RngSeed) else RngSeed(int(rng))
    a, b = gen_pooled_lb_pair(params)
    k = params.k
    r_start = params.first_kind_blocks * params.m
    samples = {}
    r_c34 = np.zeros(2, dtype=np.int64)
    for label, seq in (("a", a), ("b", b)):
        gen = seed.child(0 if label == "a" else 1).generator()
        parts = []
        for block in _collision_samples(seq, trials, gen):
            parts.append(collision_vectors_rowwise(block, k))
            if label == "a":
                # occurrences inside the r-blocks only; column 0 collects the rest
                region = np.where(block > r_start, block - r_start, 0)
                width = k - r_start + 1
                flat = (region + width * np.arange(region.shape[0])[:, None]).ravel()
                occ = np.bincount(flat, minlength=region.shape[0] * width).reshape(-1, width)[:, 1:]
                r_c34[0] += int((occ * (occ - 1) * (occ - 2) // 6).sum())
                r_c34[1] += int((occ * (occ - 1) * (occ - 2) * (occ - 3) // 24).sum())
        samples[label] = np.concatenate(parts).astype(float)
    n = params.n_blocks
    first = params.first_kind_blocks
    exp = np.array([float(first * p + (n - first) * r) for p, r in
                    zip(expected_block_collisions("p", params.m), expected_block_collisions("r", params.m))])
    mean_a, mean_b = samples["a"].mean(axis=0), samples["b"].mean(axis=0)
    se_a = samples["a"].std(axis=0, ddof=1) / math.sqrt(trials)
    se_b = samples["b"].std(axis=0, ddof=1) / math.sqrt(trials)

    def z(diff, se):
        return np.divide(diff, se, out=np.zeros_like(diff), where=se > 0)

    _, cov_a_exact = sequence_collision_moments(params, "a")
    _, cov_b_exact = sequence_collision_moments(params, "b")
    return MomentReport(
        params=params,
        trials=trials,
        expected_mean=exp,
        mean_a=mean_a,
        mean_b=mean_b,
        z_a=z(mean_a - exp, se_a),
        z_b=z(mean_b - exp, se_b),
        z_diff=z(mean_a - mean_b, np.sqrt(se_a**2 + se_b**2)),
        cov_a=np.cov(samples["a"], rowvar=False),
        cov_b=np.cov(samples["b"], rowvar=False),
        cov_a_exact=cov_a_exact,
        cov_b_exact=cov_b_exact,
        cov_leading=leading_block_covariance(exp),
        r_block_c3=int(r_c34[0]),
        r_block_c4=int(r_c34[1]),
    )


# ---------------------------------------------------------------------------
# Labeled versus pooled
# ---------------------------------------------------------------------------

EFFECTIVE_EPSILON = 1 / (8 * math.sqrt(2))  # l1 distance of avg(b) from uniform


@dataclass
class ContrastRow:
    n_blocks: int
    T: int
    k: int
    labeled_type1: float
    labeled_type2: float
    pooled_type1: float
    pooled_type2: float
    labeled_effect: float
    pooled_effect: float
    fingerprint_tv: float


@dataclass
class ContrastReport:
    m: int
    trials: int
    null: str
    rows: list[ContrastRow]
    fingerprints: dict[int, dict[str, dict[str, int]]]

    def to_dict(self) -> dict[str, Any]:
        return {
            "m": self.m, "trials": self.trials, "null": self.null,
            "rows": [asdict(r) for r in self.rows],
            "fingerprints": {str(n): v for n, v in self.fingerprints.items()},
        }


def _effect(x: np.ndarray, y: np.ndarray) -> float:
    sd = math.sqrt((x.var(ddof=1) + y.var(ddof=1)) / 2)
    return float((y.mean() - x.mean()) / sd) if sd > 0 else 0.0


def pooled_contrast(params: BlockParams, trials: int, n_schedule=None, seed: int = 0, null: str = "a") -> ContrastReport:
    """Labeled uniformity tester versus a pooled collision-rate classifier.

    The labeled statistic is ``Z`` against the tester threshold at the
    construction's l1 distance.  The pooled classifier compares
    ``c2 / C(N, 2)`` from the label-free multiset with the same threshold.
    ``null`` names the member treated as the null arm; draws are keyed by
    member name, so swapping it swaps the two error rates exactly.
    """
    if null not in ("a", "b"):
        raise ValidationError("null must be 'a' or 'b'")
    if trials < 2:
        raise ValidationError("need at least two trials")
    schedule = tuple(n_schedule) if n_schedule else (params.n_blocks,)
    rows, fps = [], {}
    for idx, n in enumerate(schedule):
        bp = BlockParams(params.m, int(n))
        seqs = dict(zip("ab", gen_pooled_lb_pair(bp)))
        threshold = UniformityParams(bp.k, EFFECTIVE_EPSILON).threshold
        stats = {}
        for label in "ab":
            gen = RngSeed(seed, (idx, ord(label))).generator()
            z_vals, pooled_vals, hist = [], [], {}
            for _ in range(trials):
                batch = draw_batch(seqs[label], 2, gen)
                z_vals.append(collision_statistic_z(batch))
                pooled = batch.pooled()
                c2 = collision_vectors_rowwise(pooled[None, :], bp.k)[0, 0]
                N = pooled.size
                pooled_vals.append(c2 / (N * (N - 1) / 2))
                key = fingerprint(pooled).to_json()
                hist[key] = hist.get(key, 0) + 1
            stats[label] = (np.array(z_vals), np.array(pooled_vals), hist)
        alt = "b" if null == "a" else "a"
        z0, p0, h0 = stats[null]
        z1, p1, h1 = stats[alt]
        keys = set(h0) | set(h1)
        fp_tv = 0.5 * sum(abs(h0.get(x, 0) - h1.get(x, 0)) for x in keys) / trials
        rows.append(ContrastRow(
            n_blocks=bp.n_blocks, T=bp.T, k=bp.k,
            labeled_type1=float(np.mean(z0 >= threshold)),
            labeled_type2=float(np.mean(z1 < threshold)),
            pooled_type1=float(np.mean(p0 >= threshold)),
            pooled_type2=float(np.mean(p1 < threshold)),
            labeled_effect=_effect(z0, z1),
            pooled_effect=_effect(p0, p1),
            fingerprint_tv=float(fp_tv),
        ))
        fps[bp.n_blocks] = {"a": stats["a"][2], "b": stats["b"][2]}
    return ContrastReport(params.m, trials, null, rows, fps)


__all__ = [
    "CSV_COLUMNS",
    "ContrastReport",
    "ErrorReport",
    "ErrorRow",
    "ExperimentSpec",
    "Instance",
    "MomentReport",
    "aggregate",
    "build_distribution",
    "pooled_contrast",
    "run_trials",
    "trial_seed",
    "verify_moments",
    "wilson_interval",
]
