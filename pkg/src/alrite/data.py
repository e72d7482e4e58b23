"""Dataset container, synthetic generators, CSV ingestion, splitting and
standardization.

All generators are deterministic given their seed. Outcomes are continuous;
treatment flags are 0/1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

FEATURE_KINDS = ("continuous", "binary", "count")


@dataclass
class Dataset:
    x: np.ndarray  # (n, d)
    t: np.ndarray  # (n,) in {0, 1}
    y: np.ndarray  # (n,)
    feature_kinds: list[str]

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.t = np.asarray(self.t, dtype=int)
        self.y = np.asarray(self.y, dtype=float)
        n, d = self.x.shape
        if self.t.shape != (n,) or self.y.shape != (n,):
            raise ValueError("x, t, y length mismatch")
        if not np.all(np.isin(self.t, (0, 1))):
            raise ValueError("treatment flags must be 0/1")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("non-finite entries in dataset")
        if len(self.feature_kinds) != d:
            raise ValueError("feature_kinds length mismatch")
        for k in self.feature_kinds:
            if k not in FEATURE_KINDS:
                raise ValueError(f"unknown feature kind {k!r}")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def n0(self) -> int:
        return int(np.sum(self.t == 0))

    @property
    def n1(self) -> int:
        return int(np.sum(self.t == 1))

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(self.x[idx], self.t[idx], self.y[idx], list(self.feature_kinds))


@dataclass
class GroundTruth:
    """Noiseless response surfaces; tau is their difference, exactly."""

    mu0: np.ndarray
    mu1: np.ndarray
    tau: np.ndarray = field(init=False)

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float)
        self.mu1 = np.asarray(self.mu1, dtype=float)
        if self.mu0.shape != self.mu1.shape:
            raise ValueError("mu0/mu1 shape mismatch")
        self.tau = self.mu1 - self.mu0

    def subset(self, indices) -> "GroundTruth":
        idx = np.asarray(indices, dtype=int)
        return GroundTruth(self.mu0[idx], self.mu1[idx])


@dataclass
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray


class GenerationError(RuntimeError):
    pass


def _retry_arms(draw, max_retries: int = 10):
    """Redraw until both treatment arms are non-empty."""
    for _ in range(max_retries):
        t = draw()
        if 0 < t.sum() < len(t):
            return t
    raise GenerationError("degenerate treatment arm after retries")


def generate_ihdp_like(
    seed: int,
    n: int = 747,
    d: int = 25,
    p_treat: float = 139 / 747,
    n_continuous: int | None = None,
    confounded: bool = False,
    beta_grid: tuple[float, ...] = (0.0, 0.1, 0.2, 0.3, 0.4),
    noise_scale: float = 1.0,
) -> tuple[Dataset, GroundTruth]:
    """Exponential/linear response-surface benchmark generator.

    mu0(x) = exp(<x + 0.5, beta>), mu1(x) = <x + 0.5, beta> + omega, with
    omega anchored so the treated-sample mean of mu1 - mu0 equals 4 (ATT).
    Covariates are standard normal (continuous) or Bernoulli(0.5) (binary);
    the default 25-feature layout uses 6 continuous + 19 binary columns.
    """
    if n < 20 or d < 1 or not 0 < p_treat < 1:
        raise ValueError("need n >= 20, d >= 1, p_treat in (0, 1)")
    rng = np.random.default_rng(seed)
    if n_continuous is None:
        n_continuous = 6 if d >= 6 else d
    n_continuous = min(n_continuous, d)
    kinds = ["continuous"] * n_continuous + ["binary"] * (d - n_continuous)
    x = np.empty((n, d))
    x[:, :n_continuous] = rng.standard_normal((n, n_continuous))
    x[:, n_continuous:] = rng.binomial(1, 0.5, size=(n, d - n_continuous))
    beta = rng.choice(np.asarray(beta_grid, dtype=float), size=d)

    if confounded:
        proj = x @ rng.standard_normal(d) / max(1.0, np.sqrt(d))
        # shift the logistic intercept so the average propensity matches p_treat
        bias = np.log(p_treat / (1 - p_treat))
        prob = 1.0 / (1.0 + np.exp(-(proj + bias)))
        t = _retry_arms(lambda: rng.binomial(1, prob))
    else:
        t = _retry_arms(lambda: rng.binomial(1, p_treat, size=n))

    lin = (x + 0.5) @ beta
    mu0 = np.exp(lin)
    omega = 4.0 + np.mean(mu0[t == 1] - lin[t == 1])
    mu1 = lin + omega
    noise = noise_scale * rng.standard_normal(n)
    y = np.where(t == 1, mu1, mu0) + noise
    return Dataset(x, t, y, kinds), GroundTruth(mu0, mu1)


@dataclass
class AcicProtocol:
    """Configuration of one step/polynomial/indicator generation protocol."""

    d: int = 58
    n_continuous: int = 23
    n_count: int = 27
    n_binary: int = 8
    term_kinds: tuple[str, str, str, str] = ("polynomial", "step", "polynomial", "indicator")
    link: str = "sigmoid"  # identity | sigmoid | clip
    noise_scale: float = 1.0
    outcome_terms: int = 3

    def __post_init__(self):
        if self.n_continuous + self.n_count + self.n_binary != self.d:
            raise ValueError("feature-kind counts must sum to d")
        for k in self.term_kinds:
            if k not in ("polynomial", "step", "indicator"):
                raise ValueError(f"unknown term kind {k!r}")
        if self.link not in ("identity", "sigmoid", "clip"):
            raise ValueError(f"unknown link {self.link!r}")
        if self.noise_scale <= 0:
            raise ValueError("noise scale must be > 0")


def _random_term(kind: str, rng: np.random.Generator):
    """A scalar function of one covariate: polynomial (deg <= 3), a step, or
    an indicator."""
    if kind == "polynomial":
        coefs = rng.uniform(-1, 1, size=4)  # degree <= 3
        return lambda v: coefs[0] + coefs[1] * v + coefs[2] * v**2 + coefs[3] * v**3
    theta = rng.uniform(-1, 1)
    if kind == "step":
        a = rng.uniform(-2, 2)
        return lambda v: a * (v > theta).astype(float)
    return lambda v: (v > theta).astype(float)


def _apply_link(u: np.ndarray, link: str) -> np.ndarray:
    if link == "identity":
        return u
    if link == "sigmoid":
        return 1.0 / (1.0 + np.exp(-u))
    return np.clip(u, 0.0, 1.0)


def generate_acic_like(seed: int, n: int, protocol: AcicProtocol) -> tuple[Dataset, GroundTruth]:
    """Generator with composite f(x) = g(f1(x_a) + f2(x_b) + f3(x_a) f4(x_b))
    propensity and per-arm surfaces of the same family. The propensity is
    clipped to [0.05, 0.95] so positivity holds by construction."""
    rng = np.random.default_rng(seed)
    p = protocol
    kinds = (["continuous"] * p.n_continuous + ["count"] * p.n_count + ["binary"] * p.n_binary)
    x = np.empty((n, p.d))
    x[:, : p.n_continuous] = rng.standard_normal((n, p.n_continuous))
    x[:, p.n_continuous : p.n_continuous + p.n_count] = rng.poisson(3.0, size=(n, p.n_count))
    x[:, p.n_continuous + p.n_count :] = rng.binomial(1, 0.5, size=(n, p.n_binary))

    col_a, col_b = rng.choice(p.d, size=2, replace=False)
    f1, f2, f3, f4 = (_random_term(k, rng) for k in p.term_kinds)
    xa, xb = x[:, col_a], x[:, col_b]
    raw = f1(xa) + f2(xb) + f3(xa) * f4(xb)
    propensity = np.clip(_apply_link(raw, p.link), 0.05, 0.95)
    t = _retry_arms(lambda: rng.binomial(1, propensity))

    def surface():
        cols = rng.choice(p.d, size=p.outcome_terms, replace=False)
        terms = [_random_term(rng.choice(["polynomial", "step", "indicator"]), rng) for _ in cols]
        ci, cj = rng.choice(p.d, size=2, replace=False)
        inter = _random_term("polynomial", rng)
        scale = rng.uniform(0.5, 2.0)

        def g(xmat):
            out = sum(f(xmat[:, c]) for f, c in zip(terms, cols))
            return scale * (out + inter(xmat[:, ci]) * (xmat[:, cj] > 0))

        return g

    g0, g1 = surface(), surface()
    mu0, mu1 = g0(x), g1(x)
    y = np.where(t == 1, mu1, mu0) + p.noise_scale * rng.standard_normal(n)
    return Dataset(x, t, y, kinds), GroundTruth(mu0, mu1)


def generate_two_cluster_toy(seed: int, n: int = 200) -> Dataset:
    """Two horizontal Gaussian clusters offset on the second axis; treatment
    probability is logistic in x1 with opposite slopes per cluster, so the
    x-axis projection mixes arms while the 2-D view keeps them separated."""
    if n < 40:
        raise ValueError("need n >= 40")
    rng = np.random.default_rng(seed)
    cluster = rng.integers(0, 2, size=n)
    x1 = rng.standard_normal(n)
    x2 = np.where(cluster == 0, -3.0, 3.0) + 0.3 * rng.standard_normal(n)
    slope = np.where(cluster == 0, 4.0, -4.0)
    prob = 1.0 / (1.0 + np.exp(-slope * x1))
    t = _retry_arms(lambda: rng.binomial(1, prob))
    y = x1 + 0.1 * rng.standard_normal(n)  # outcome is incidental for this toy
    return Dataset(np.column_stack([x1, x2]), t, y, ["continuous", "continuous"])


class CsvFormatError(ValueError):
    pass


def save_csv(path, dataset: Dataset, truth: GroundTruth | None = None) -> None:
    """Header x0..x{d-1},t,y[,mu0,mu1]; reals at 17 significant digits."""
    header = [f"x{j}" for j in range(dataset.d)] + ["t", "y"]
    if truth is not None:
        header += ["mu0", "mu1"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.x[i]]
            row += [str(int(dataset.t[i])), repr(float(dataset.y[i]))]
            if truth is not None:
                row += [repr(float(truth.mu0[i])), repr(float(truth.mu1[i]))]
            writer.writerow(row)


def load_csv(path) -> tuple[Dataset, GroundTruth | None]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("empty file") from None
        if "t" not in header or "y" not in header:
            raise CsvFormatError("missing t/y column")
        d = header.index("t")
        expected = [f"x{j}" for j in range(d)] + ["t", "y"]
        has_truth = header[d + 2 :] == ["mu0", "mu1"]
        if header[: d + 2] != expected or not (has_truth or len(header) == d + 2):
            raise CsvFormatError(f"unexpected header {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise CsvFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise CsvFormatError(f"line {lineno}: {exc}") from None
    if not rows:
        raise CsvFormatError("no data rows")
    arr = np.asarray(rows)
    x = arr[:, :d]
    t = arr[:, d]
    if not np.all(np.isin(t, (0.0, 1.0))):
        raise CsvFormatError("t column must be 0/1")
    y = arr[:, d + 1]
    # columns holding only 0/1 values are tagged binary
    kinds = ["binary" if np.all(np.isin(x[:, j], (0.0, 1.0))) else "continuous" for j in range(d)]
    dataset = Dataset(x, t.astype(int), y, kinds)
    truth = GroundTruth(arr[:, d + 2], arr[:, d + 3]) if has_truth else None
    return dataset, truth


def split(dataset: Dataset, test_fraction: float, val_fraction: float, seed: int,
          max_retries: int = 10) -> SplitIndices:
    """Random permutation split. test_fraction applies to n; val_fraction to
    the remaining training part. Sizes are rounded to the nearest integer.
    Splits leaving an empty treatment arm anywhere are redrawn."""
    if not (0 < test_fraction < 1 and 0 < val_fraction < 1):
        raise ValueError("fractions must lie in (0, 1)")
    n = dataset.n
    n_test = int(round(n * test_fraction))
    n_val = int(round((n - n_test) * val_fraction))
    if n_test < 2 or n_val < 2 or n - n_test - n_val < 2:
        raise ValueError("split sizes too small")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        perm = rng.permutation(n)
        test = perm[:n_test]
        val = perm[n_test : n_test + n_val]
        train = perm[n_test + n_val :]
        ok = all(0 < dataset.t[part].sum() < len(part) for part in (train, val, test))
        if ok:
            return SplitIndices(np.sort(train), np.sort(val), np.sort(test))
    raise GenerationError("could not produce a split with both arms in every part")


@dataclass
class Scaler:
    """Column-wise standardization of continuous covariates and the outcome.
    Zero-variance continuous columns keep scale 1 and are flagged."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float
    continuous: np.ndarray  # boolean mask
    clamped: np.ndarray  # boolean mask of zero-variance continuous columns

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_scale

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_scale

    def inverse_y(self, y_std: np.ndarray) -> np.ndarray:
        return y_std * self.y_scale + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "continuous": self.continuous.astype(int).tolist(),
            "clamped": self.clamped.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(
            np.asarray(d["x_mean"], dtype=float),
            np.asarray(d["x_scale"], dtype=float),
            float(d["y_mean"]),
            float(d["y_scale"]),
            np.asarray(d["continuous"], dtype=bool),
            np.asarray(d["clamped"], dtype=bool),
        )


def identity_scaler(d: int) -> Scaler:
    return Scaler(np.zeros(d), np.ones(d), 0.0, 1.0,
                  np.ones(d, dtype=bool), np.zeros(d, dtype=bool))


def standardize(dataset: Dataset, fit_indices) -> tuple[Scaler, Dataset]:
    """Fit on fit_indices only; binary columns pass through untouched."""
    idx = np.asarray(fit_indices, dtype=int)
    if idx.size == 0:
        raise ValueError("fit_indices must be non-empty")
    cont = np.asarray([k != "binary" for k in dataset.feature_kinds])
    x_mean = np.zeros(dataset.d)
    x_scale = np.ones(dataset.d)
    x_fit = dataset.x[idx]
    x_mean[cont] = x_fit[:, cont].mean(axis=0)
    sd = x_fit[:, cont].std(axis=0, ddof=0)
    clamped_cont = sd == 0
    sd = np.where(clamped_cont, 1.0, sd)
    x_scale[cont] = sd
    clamped = np.zeros(dataset.d, dtype=bool)
    clamped[cont] = clamped_cont
    y_mean = float(dataset.y[idx].mean())
    y_sd = float(dataset.y[idx].std(ddof=0))
    y_scale = y_sd if y_sd > 0 else 1.0
    scaler = Scaler(x_mean, x_scale, y_mean, y_scale, cont, clamped)
    transformed = Dataset(
        scaler.transform_x(dataset.x),
        dataset.t,
        scaler.transform_y(dataset.y),
        list(dataset.feature_kinds),
    )
    return scaler, transformed
