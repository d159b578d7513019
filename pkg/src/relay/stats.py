"""Accuracy and precision tables, main-sequence fit, repeated-measures ANOVA.

F tail probabilities use the regularised incomplete beta function from
scipy; sphericity handling follows the usual Mauchly / Greenhouse-Geisser /
Huynh-Feldt recipe on orthonormal contrasts.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import special

from .geometry import ViewingGeometry, px_offset_to_deg
from .tracker import CalibrationGrid


class MissingPoint(ValueError):
    pass


class TooFewTrials(ValueError):
    pass


class DegenerateFit(ValueError):
    pass


class IncompleteData(ValueError):
    pass


def f_sf(x, d1, d2):
    """Upper tail P(F > x) of the F(d1, d2) distribution."""
    x = np.asarray(x, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = d2 / (d2 + d1 * x)
        p = special.betainc(0.5 * d2, 0.5 * d1, z)
    p = np.where(np.isposinf(x), 0.0, p)
    p = np.where(x <= 0, 1.0, p)
    p = np.where(np.isnan(x), np.nan, p)
    return float(p) if p.ndim == 0 else p


def chi2_sf(x, df):
    return float(special.gammaincc(0.5 * df, 0.5 * x)) if x > 0 else 1.0


# -- accuracy / precision ----------------------------------------------------------


@dataclass(frozen=True)
class PointStats:
    point_id: int
    true_px: tuple[float, float]
    mean_px: tuple[float, float]
    abs_dev_px: tuple[float, float]
    abs_dev_mm: tuple[float, float]
    abs_dev_deg: tuple[float, float]
    sd_px: tuple[float, float]
    sd_mm: tuple[float, float]
    sd_deg: tuple[float, float]
    n_samples: int
    n_trials: int


def _point_stats(pid: int, trials: Sequence[np.ndarray], truth, geom: ViewingGeometry) -> PointStats:
    pooled = np.concatenate([np.asarray(t, float).reshape(-1, 2) for t in trials])
    pooled = pooled[np.isfinite(pooled).all(axis=1)]
    if len(pooled) == 0:
        raise MissingPoint(f"point {pid} has no valid fixation samples")
    mean = pooled.mean(axis=0)
    dev = np.abs(mean - np.asarray(truth, float))
    # centred on a sample so constant data gives an SD of exactly zero
    sd = (pooled - pooled[0]).std(axis=0)
    pitch = geom.pixel_pitch_mm

    def pair(a):
        return float(a[0]), float(a[1])

    return PointStats(
        pid, pair(truth), pair(mean), pair(dev), pair(dev * pitch), pair(px_offset_to_deg(dev, geom)),
        pair(sd), pair(sd * pitch), pair(px_offset_to_deg(sd, geom)), len(pooled), len(trials),
    )


def accuracy_table(recordings: Mapping[int, Sequence[np.ndarray]], truth, geom: ViewingGeometry) -> list[PointStats]:
    """Per point: |mean measured - true| per axis.

    ``recordings`` maps point id to a list of (n, 2) fixation-sample arrays,
    one per trial; ``truth`` maps point id (or index) to the true pixel.
    """
    out = []
    for pid in sorted(recordings):
        trials = recordings[pid]
        if len(trials) == 0:
            raise MissingPoint(f"point {pid} has no trials")
        out.append(_point_stats(pid, trials, truth[pid], geom))
    return out


def precision_table(recordings: Mapping[int, Sequence[np.ndarray]], truth, geom: ViewingGeometry) -> list[PointStats]:
    """Per point: SD of all fixation samples pooled across trials."""
    for pid, trials in recordings.items():
        if len(trials) < 2:
            raise TooFewTrials(f"point {pid} has {len(trials)} trial(s), need 2")
    return accuracy_table(recordings, truth, geom)


# -- main sequence ---------------------------------------------------------------------


@dataclass(frozen=True)
class MainSequenceFit:
    slope: float
    intercept: float
    pv_at_10deg: float
    n: int
    r2: float


def fit_main_sequence(amplitudes, peak_velocities) -> MainSequenceFit:
    """Ordinary least squares of peak velocity on amplitude."""
    a = np.asarray(amplitudes, float)
    v = np.asarray(peak_velocities, float)
    if a.shape != v.shape or a.ndim != 1:
        raise ValueError("amplitudes and velocities must be matching 1-D arrays")
    if len(a) < 2 or np.ptp(a) == 0:
        raise DegenerateFit("need at least two distinct amplitudes")
    am, vm = a.mean(), v.mean()
    da = a - am
    slope = float(np.dot(da, v - vm) / np.dot(da, da))
    intercept = float(vm - slope * am)
    ss_tot = float(np.sum((v - vm) ** 2))
    ss_res = float(np.sum((v - intercept - slope * a) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return MainSequenceFit(slope, intercept, intercept + 10.0 * slope, len(a), r2)


# -- repeated-measures ANOVA -------------------------------------------------------------


@dataclass(frozen=True)
class PairwiseResult:
    a: int
    b: int
    mean_diff: float
    t: float
    df: int
    p_raw: float
    p_adj: float


@dataclass(frozen=True)
class RmAnovaResult:
    n: int
    k: int
    ss_treatment: float
    ss_subjects: float
    ss_error: float
    df_treatment: int
    df_error: int
    F: float
    p_uncorrected: float
    partial_eta2: float
    mauchly_W: float
    mauchly_p: float
    epsilon_gg: float
    epsilon_hf: float
    p_gg: float
    p_hf: float
    # the p value to report: Huynh-Feldt when Mauchly rejects sphericity, else uncorrected
    correction: str
    p: float
    zero_error_variance: bool = False
    posthoc: list[PairwiseResult] = field(default_factory=list)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _check_matrix(data) -> np.ndarray:
    x = np.asarray(data, float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise IncompleteData("need an n x k matrix with n >= 2 and k >= 2")
    if not np.isfinite(x).all():
        raise IncompleteData("matrix has missing or non-finite cells")
    return x


def _contrasts(k: int) -> np.ndarray:
    """Orthonormal (k, k-1) contrast basis orthogonal to the constant vector."""
    c = np.zeros((k, k - 1))
    for j in range(1, k):
        c[:j, j - 1] = 1.0
        c[j, j - 1] = -float(j)
        c[:, j - 1] /= math.sqrt(j * (j + 1))
    return c


def sphericity(data) -> tuple[float, float, float, float]:
    """Mauchly's W, its chi-square p value and the GG and HF epsilons."""
    x = _check_matrix(data)
    n, k = x.shape
    if k == 2:
        return 1.0, 1.0, 1.0, 1.0
    p = k - 1
    y = x @ _contrasts(k)
    t = np.cov(y, rowvar=False)
    tr = float(np.trace(t))
    tr2 = float(np.trace(t @ t))
    if tr <= 0 or tr2 <= 0:
        return 1.0, 1.0, 1.0, 1.0
    gg = min(1.0, max(1.0 / p, tr * tr / (p * tr2)))
    den = p * (n - 1 - p * gg)
    hf = (n * p * gg - 2.0) / den if den > 0 else 1.0
    hf = min(1.0, max(gg, hf))
    w = float(np.linalg.det(t) / (tr / p) ** p)
    w = min(max(w, 0.0), 1.0)
    if w <= 0.0:
        return 0.0, 0.0, gg, hf
    d = 1.0 - (2.0 * p * p + p + 2.0) / (6.0 * p * (n - 1))
    chi = -(n - 1) * d * math.log(w)
    return w, chi2_sf(chi, p * (p + 1) / 2.0 - 1.0), gg, hf


def paired_t(a, b) -> tuple[float, float]:
    """Two-sided paired t test; returns (t, p)."""
    d = np.asarray(a, float) - np.asarray(b, float)
    n = len(d)
    m = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if m == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, m), 0.0
    t = m / (sd / math.sqrt(n))
    return t, f_sf(t * t, 1, n - 1)


def bonferroni_adjust(p: float, m: int) -> float:
    return min(1.0, p * m)


def bonferroni_pairwise(data) -> list[PairwiseResult]:
    x = _check_matrix(data)
    n, k = x.shape
    pairs = list(itertools.combinations(range(k), 2))
    out = []
    for a, b in pairs:
        t, p = paired_t(x[:, a], x[:, b])
        out.append(PairwiseResult(a, b, float(np.mean(x[:, a] - x[:, b])), t, n - 1, p, bonferroni_adjust(p, len(pairs))))
    return out


SPHERICITY_ALPHA = 0.05


def rm_anova(data, posthoc: bool = True) -> RmAnovaResult:
    """One-way within-subjects ANOVA on an n-subjects x k-conditions matrix.

    All of the uncorrected, GG and HF p values are returned; ``p`` applies
    the Huynh-Feldt correction only when Mauchly's test rejects sphericity.
    """
    x = _check_matrix(data)
    n, k = x.shape
    gm = x.mean()
    rows = x.mean(axis=1, keepdims=True)
    cols = x.mean(axis=0, keepdims=True)
    ss_t = float(n * np.sum((cols - gm) ** 2))
    ss_s = float(k * np.sum((rows - gm) ** 2))
    ss_e = float(np.sum((x - rows - cols + gm) ** 2))
    df_t, df_e = k - 1, (n - 1) * (k - 1)
    # sums of squares below rounding noise of the data count as zero
    tiny = 1e-24 * max(1.0, float(np.sum((x - gm) ** 2)))
    zero_err = ss_e <= tiny
    if ss_t <= tiny:
        f, p, eta = 0.0, 1.0, 0.0
    elif zero_err:
        f, p, eta = math.inf, 0.0, 1.0
    else:
        f = (ss_t / df_t) / (ss_e / df_e)
        p = f_sf(f, df_t, df_e)
        eta = ss_t / (ss_t + ss_e)
    w, wp, gg, hf = sphericity(x)
    p_gg = f_sf(f, gg * df_t, gg * df_e) if 0 < f < math.inf else p
    p_hf = f_sf(f, hf * df_t, hf * df_e) if 0 < f < math.inf else p
    violated = wp < SPHERICITY_ALPHA
    return RmAnovaResult(
        n, k, ss_t, ss_s, ss_e, df_t, df_e, f, p, eta, w, wp, gg, hf, p_gg, p_hf,
        "huynh-feldt" if violated else "none", p_hf if violated else p,
        zero_err, bonferroni_pairwise(x) if posthoc else [],
    )


# -- pupil size vs gaze direction -----------------------------------------------------------

HORIZONTAL = ("left", "middle", "right")
VERTICAL = ("up", "middle", "down")


def _group_matrix(sizes: np.ndarray, layout: Mapping[int, tuple[int, int]], axis: int) -> np.ndarray:
    """(trials, 3) means over the three outer points in each row or column."""
    out = np.zeros((sizes.shape[0], 3))
    for g in range(3):
        ids = [pid for pid, rc in layout.items() if rc[axis] == g]
        out[:, g] = sizes[:, ids].mean(axis=1)
    return out


def pupil_direction_bias(sizes, layout: Mapping[int, tuple[int, int]] | None = None, split: int | None = None) -> dict:
    """Direction-grouped pupil size over the outer 3x3 grid points.

    ``sizes`` is (trials, points): mean pupil size per trial and grid point.
    The first ``split`` trials (default half) feed the vertical analysis, the
    rest the horizontal one.  Percentages are relative to the grand mean of
    the nine outer points over the trials used.
    """
    x = np.asarray(sizes, float)
    layout = layout or CalibrationGrid.outer_layout()
    if x.ndim != 2 or x.shape[1] <= max(layout):
        raise ValueError("sizes must be (trials, points) covering the grid layout")
    split = x.shape[0] // 2 if split is None else split
    if split < 2 or x.shape[0] - split < 2:
        raise TooFewTrials(f"{x.shape[0]} trials cannot be split into two halves of >= 2")
    ids = sorted(layout)
    result = {}
    for name, labels, part, axis in (("vertical", VERTICAL, x[:split], 0), ("horizontal", HORIZONTAL, x[split:], 1)):
        m = _group_matrix(part, layout, axis)
        grand = float(part[:, ids].mean())
        means = m.mean(axis=0)
        result[name] = {
            "labels": list(labels),
            "trials": int(part.shape[0]),
            "grand_mean": grand,
            "means": [float(v) for v in means],
            "percent": [float(100.0 * (v / grand - 1.0)) for v in means],
            "anova": rm_anova(m),
        }
    return result
