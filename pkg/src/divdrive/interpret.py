"""Saliency extraction and saliency-quality metrics.

EigenCam-style saliency is the top right-singular vector of the feature
stack reshaped to (n_f, h*w), centred across channels, found by power
iteration.  Shared Interest scores compare a binarised saliency mask with a
ground-truth mask; the correlation report compares how strongly saliency
tracks a control signal in two models.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

CATEGORIES = ("pedestrians", "cyclists", "vehicles", "traffic_lights")
SEMANTIC_CLASSES = ("road", "roadline", "sidewalk")
OVERALL = "overall"
SCORE_COLUMNS = ("category", "n_frames", "iou", "gtc", "sc")
SEMANTIC_COLUMNS = ("class", "n_frames", "iou")
CORRELATION_COLUMNS = ("signal", "rho_a", "rho_b", "n_a", "n_b", "r2", "z")


# -- saliency ------------------------------------------------------------

def _top_right_vector(A, tol=1e-10, max_iter=1000):
    """Top right-singular vector of A by power iteration on A A^T (the smaller Gram matrix)."""
    G = A @ A.T
    u = np.ones(G.shape[0])
    if np.linalg.norm(G @ u) <= 1e-300:
        u = G[int(np.argmax(np.einsum("ij,ij->i", G, G)))].copy()
    u /= np.linalg.norm(u)
    for _ in range(max_iter):
        nu = G @ u
        n = np.linalg.norm(nu)
        if n == 0:
            break
        nu /= n
        done = np.linalg.norm(nu - u) < tol
        u = nu
        if done:
            break
    v = A.T @ u
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def eigencam(M, tol=1e-10, max_iter=1000):
    """(h, w) saliency in [0, 1] from an (n_f, h, w) stack; all-zero stacks give all-zero maps.

    If centring across channels cancels the stack entirely (every channel
    identical) the uncentred stack is used instead.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 3:
        raise ValueError(f"feature stack must be (n_f, h, w), got {M.shape}")
    nf, h, w = M.shape
    A = M.reshape(nf, h * w)
    if not np.any(A):
        return np.zeros((h, w))
    Ac = A - A.mean(axis=0, keepdims=True)
    if not np.any(np.abs(Ac) > 1e-14 * np.abs(A).max()):
        Ac = A
    v = _top_right_vector(Ac, tol, max_iter)
    pos, neg = np.maximum(v, 0).sum(), np.maximum(-v, 0).sum()
    if neg > pos:
        v = -v
    s = np.maximum(v, 0.0)
    top = s.max()
    return (s / top).reshape(h, w) if top > 0 else np.zeros((h, w))


def upsample(s, factor):
    return np.kron(np.asarray(s, dtype=np.float64), np.ones((factor, factor)))


def binarize(s, q=0.85):
    """True where the map reaches the q-quantile of its nonzero values (inclusive)."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile must lie in (0, 1)")
    s = np.asarray(s, dtype=np.float64)
    nz = s[s > 0]
    if nz.size == 0:
        return np.zeros(s.shape, dtype=bool)
    return s >= np.quantile(nz, q)


# -- Shared Interest -----------------------------------------------------

@dataclass(frozen=True)
class SharedInterestScores:
    iou: float
    gtc: float
    sc: float


def shared_interest(G, S):
    """IoU, ground-truth coverage and saliency coverage; None where a denominator is empty."""
    G, S = np.asarray(G, dtype=bool), np.asarray(S, dtype=bool)
    if G.shape != S.shape:
        raise ValueError(f"mask shapes differ: {G.shape} vs {S.shape}")
    inter = int(np.count_nonzero(G & S))
    union = int(np.count_nonzero(G | S))
    g, s = int(np.count_nonzero(G)), int(np.count_nonzero(S))
    return SharedInterestScores(inter / union if union else None,
                                inter / g if g else None,
                                inter / s if s else None)


def _mean(values):
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def category_report(frames, categories=CATEGORIES):
    """Per-category mean scores over frames, plus an ``overall`` row.

    ``frames`` is an iterable of ``(saliency_mask, {category: gt_mask})``.
    Frames whose ground truth for a category is empty do not count for it;
    the overall row scores against the union of all category masks.
    Categories present in no frame are left out.
    """
    acc = {c: [] for c in (*categories, OVERALL)}
    for S, gts in frames:
        union = np.zeros(np.shape(S), dtype=bool)
        for c in categories:
            G = np.asarray(gts[c], dtype=bool)
            union |= G
            if G.any():
                acc[c].append(shared_interest(G, S))
        if union.any():
            acc[OVERALL].append(shared_interest(union, S))
    report = {}
    for c, scores in acc.items():
        if scores:
            report[c] = {"n_frames": len(scores),
                         "iou": _mean(x.iou for x in scores),
                         "gtc": _mean(x.gtc for x in scores),
                         "sc": _mean(x.sc for x in scores)}
    return report


def semantic_iou(S, class_masks, classes=SEMANTIC_CLASSES):
    return {c: shared_interest(class_masks[c], S).iou for c in classes}


def semantic_report(frames, classes=SEMANTIC_CLASSES):
    """Mean per-class IoU over ``(saliency_mask, class_masks)`` frames."""
    acc = {c: [] for c in classes}
    for S, masks in frames:
        for c, v in semantic_iou(S, masks, classes).items():
            if v is not None:
                acc[c].append(v)
    return {c: {"n_frames": len(v), "iou": _mean(v)} for c, v in acc.items() if v}


# -- correlation ---------------------------------------------------------

def saliency_mass(s):
    """Saliency in the left half of the grid minus the right half (left = positive steer)."""
    s = np.asarray(s, dtype=np.float64)
    half = s.shape[-1] // 2
    return float(s[..., :half].sum() - s[..., s.shape[-1] - half:].sum())


def pearson(x, y):
    """Two-pass sample correlation; None for a constant series."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson needs two 1-D series of equal length")
    if x.size < 3:
        raise ValueError("pearson needs at least 3 samples")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = math.fsum(dx * dx), math.fsum(dy * dy)
    if sxx == 0 or syy == 0:
        return None
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


@dataclass(frozen=True)
class CorrelationReport:
    rho_a: float
    rho_b: float
    n_a: int
    n_b: int
    r2: float
    z: float


def relative_explained_variance(rho_a, rho_b):
    if rho_b == 0:
        return None
    return rho_a ** 2 / rho_b ** 2


def fisher_z(rho_a, rho_b, n_a, n_b):
    for r in (rho_a, rho_b):
        if not -1.0 < r < 1.0:
            raise ValueError("Fisher z needs |rho| < 1")
    if n_a <= 3 or n_b <= 3:
        raise ValueError("Fisher z needs more than 3 samples per correlation")
    return (math.atanh(rho_a) - math.atanh(rho_b)) / math.sqrt(1.0 / (n_a - 3) + 1.0 / (n_b - 3))


def correlation_report(rho_a, rho_b, n_a, n_b):
    z = fisher_z(rho_a, rho_b, n_a, n_b)
    return CorrelationReport(rho_a, rho_b, int(n_a), int(n_b), relative_explained_variance(rho_a, rho_b), z)


# -- output --------------------------------------------------------------

def _fmt(v):
    return "" if v is None else (repr(float(v)) if isinstance(v, float) else str(v))


def write_category_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SCORE_COLUMNS)
        for c in (*CATEGORIES, OVERALL):
            if c in report:
                r = report[c]
                w.writerow([c, r["n_frames"], _fmt(r["iou"]), _fmt(r["gtc"]), _fmt(r["sc"])])


def write_semantic_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SEMANTIC_COLUMNS)
        for c in SEMANTIC_CLASSES:
            if c in report:
                w.writerow([c, report[c]["n_frames"], _fmt(report[c]["iou"])])


def write_correlation_csv(path, rows):
    """``rows`` maps a signal name to a CorrelationReport, a partial mapping of
    its fields (single-model runs), or None when undefined."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CORRELATION_COLUMNS)
        for name, r in rows.items():
            d = asdict(r) if isinstance(r, CorrelationReport) else dict(r or {})
            w.writerow([name] + [_fmt(d.get(k)) for k in CORRELATION_COLUMNS[1:]])


def write_json(path, obj):
    def conv(o):
        if isinstance(o, (SharedInterestScores, CorrelationReport)):
            return asdict(o)
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(type(o))

    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, default=conv)
        fh.write("\n")


def write_pgm(path, s):
    """8-bit binary portable graymap of a [0, 1] map."""
    img = np.clip(np.rint(np.asarray(s, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(img.tobytes())
