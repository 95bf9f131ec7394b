"""End-to-end run: sample latent points, filter by density threshold, rank by
predicted score, optimise the top t under the density constraint, decode and
score the optima, and aggregate the per-start records."""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import objectives
from .optimizer import OptConfig, maximize_constrained


class NoFeasibleStartsError(RuntimeError):
    """No sampled point survived the density threshold."""


@dataclass
class GridSpec:
    count: int
    b: float = 1.0  # variance scale of the N(0, b I) sampling distribution
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.b <= 0:
            raise ValueError("b must be positive")


@dataclass
class Candidate:
    point: np.ndarray
    log_density: float
    predicted_score: Optional[float] = None
    index: int = -1  # position in the original sample order


@dataclass
class StartRecord:
    candidate: Candidate
    optimum: np.ndarray
    predicted_score_opt: float
    log_density_opt: float
    n_evals: int
    reason: str
    decoded: object = None
    decode_ok: bool = True
    decode_error: str = ""
    true_score: Optional[float] = None


@dataclass
class ColdRunReport:
    records: list
    truncated: bool  # fewer than t candidates survived the filter
    median_log_density: float = field(init=False)
    mean_true_score: Optional[float] = field(init=False)
    max_true_score: Optional[float] = field(init=False)
    frac_decoded: float = field(init=False)
    diversity: Optional[float] = field(init=False)

    def __post_init__(self):
        agg = aggregate_records(self.records)
        self.median_log_density = agg["median_log_density"]
        self.mean_true_score = agg["mean_true_score"]
        self.max_true_score = agg["max_true_score"]
        self.frac_decoded = agg["frac_decoded"]
        self.diversity = agg["diversity"]


def aggregate_records(records):
    """Summary statistics recomputable from the per-start records."""
    if not records:
        raise ValueError("no records to aggregate")
    scores = [r.true_score for r in records if r.decode_ok and r.true_score is not None]
    decoded_imgs = [
        r.decoded for r in records
        if r.decode_ok and isinstance(r.decoded, np.ndarray) and r.decoded.ndim == 2
    ]
    div = None
    if len(decoded_imgs) >= 2 and len({img.shape for img in decoded_imgs}) == 1:
        maxval = max(1.0, max(float(np.max(img)) for img in decoded_imgs))
        div = objectives.diversity(decoded_imgs, maxval=maxval)
    return {
        "median_log_density": float(np.median([r.log_density_opt for r in records])),
        "mean_true_score": float(np.mean(scores)) if scores else None,
        "max_true_score": float(np.max(scores)) if scores else None,
        "frac_decoded": sum(r.decode_ok for r in records) / len(records),
        "diversity": div,
    }


def sample_grid(spec, dim):
    """count i.i.d. draws from N(0, b I); deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    return rng.normal(0.0, np.sqrt(spec.b), size=(spec.count, dim))


def filter_by_density(points, density_model, eta, mode="exact", index=None, k=None,
                      ef_search=None, workers=1):
    """Candidates whose log-density is >= eta, in input order (scores unset)."""
    points = np.asarray(points, dtype=np.float64)
    logd = density_model.score_samples(
        points, mode=mode, index=index, k=k, ef_search=ef_search, workers=workers
    )
    return [
        Candidate(point=points[i], log_density=float(logd[i]), index=i)
        for i in np.nonzero(logd >= eta)[0]
    ]


def rank_and_select(candidates, predictor, t):
    """Top t candidates by descending predicted score, ties by ascending index.

    Returns (selected, truncated); truncated is True when fewer than t
    candidates were available.
    """
    if t < 1:
        raise ValueError("t must be >= 1")
    if not candidates:
        raise NoFeasibleStartsError("no candidates survived the density filter")
    for c in candidates:
        c.predicted_score = float(predictor(c.point))
    order = sorted(range(len(candidates)),
                   key=lambda i: (-candidates[i].predicted_score, candidates[i].index))
    selected = [candidates[i] for i in order[:t]]
    return selected, len(selected) < t


def run_cold(density_model, predictor, grid_spec, eta, t, opt_config=None,
             decoder=None, true_score=None, mode="exact", index=None, k=None,
             ef_search=None, workers=1):
    """Full pipeline; deterministic given seeds and independent of workers.

    ``predictor`` maps a latent vector to a scalar; ``decoder`` (optional) maps
    a latent optimum to a sample and may raise to signal an invalid decode;
    ``true_score`` scores the decoded sample (or the latent point itself when
    no decoder is configured).
    """
    opt_config = opt_config or OptConfig()
    dim = density_model.n_features_
    points = sample_grid(grid_spec, dim)
    candidates = filter_by_density(points, density_model, eta, mode=mode, index=index,
                                   k=k, ef_search=ef_search, workers=workers)
    starts, truncated = rank_and_select(candidates, predictor, t)

    if mode == "knn":
        density_fn = lambda g: density_model.approx_log_density(index, g, k, ef_search=ef_search)
    else:
        density_fn = density_model.exact_log_density

    def optimise_one(cand):
        res = maximize_constrained(lambda g: float(predictor(g)), density_fn, eta,
                                   cand.point, opt_config)
        rec = StartRecord(
            candidate=cand,
            optimum=res.point,
            predicted_score_opt=res.objective,
            log_density_opt=density_fn(res.point),
            n_evals=res.n_evals,
            reason=res.reason,
        )
        if decoder is not None:
            try:
                rec.decoded = decoder(res.point)
            except Exception as exc:  # decode failure is data, not a crash
                rec.decode_ok = False
                rec.decode_error = str(exc)
        if rec.decode_ok and true_score is not None:
            target = rec.decoded if decoder is not None else res.point
            try:
                rec.true_score = float(true_score(target))
            except Exception as exc:
                rec.decode_ok = False
                rec.decode_error = str(exc)
        return rec

    if workers <= 1 or len(starts) == 1:
        records = [optimise_one(c) for c in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(optimise_one, starts))
    return ColdRunReport(records=records, truncated=truncated)


def knn_accuracy_study(density_model, index, points, ks, ef_search=None, workers=1):
    """Rows of (k, mean approx log-density, mean exact log-density)."""
    points = np.asarray(points, dtype=np.float64)
    exact_mean = float(np.mean(density_model.score_samples(points, workers=workers)))
    rows = []
    for k in sorted(ks):
        approx = density_model.score_samples(points, mode="knn", index=index, k=k,
                                             ef_search=ef_search, workers=workers)
        rows.append((k, float(np.mean(approx)), exact_mean))
    return rows


def knn_timing_study(density_model, index, points, ks, ef_search=None, workers=1):
    """Rows of (k, approx seconds, exact seconds); warmup pass excluded.

    When ``ef_search`` is None the query beam width is set to k for each row,
    so the measured cost reflects how the approximation scales with k rather
    than a fixed beam floor.
    """
    points = np.asarray(points, dtype=np.float64)
    ks = sorted(ks)
    warm = points[: min(len(points), 64)]
    density_model.score_samples(warm, workers=workers)
    density_model.score_samples(warm, mode="knn", index=index, k=ks[0],
                                ef_search=ef_search or ks[0], workers=workers)

    t0 = time.perf_counter()
    density_model.score_samples(points, workers=workers)
    exact_s = time.perf_counter() - t0

    rows = []
    for k in ks:
        t0 = time.perf_counter()
        density_model.score_samples(points, mode="knn", index=index, k=k,
                                    ef_search=ef_search or k, workers=workers)
        rows.append((k, time.perf_counter() - t0, exact_s))
    return rows
