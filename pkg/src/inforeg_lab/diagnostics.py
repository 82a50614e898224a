"""Post-hoc numerical checks on the approximations behind proximal regulation.

* orthogonality: random high-dimensional directions are nearly orthogonal.
* equivalence: the proximal penalty splits exactly into a sum of squared
  batch-gradient norms plus a cross-term; we measure how large the cross-term
  really is.
* descent: the norm bound on the regulation gradient, plus how often the
  smoothness descent inequality holds under an estimated curvature constant.

The equivalence and descent checks read the per-batch gradient log written by
the trainer (``gradlog.csv``, ``descent.csv``).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .errors import ContractError, InputError
from .fisher import batch_cosine_matrix

REL_TOL = 1e-9


def expected_abs_cosine(n: int) -> float:
    """E|cos| between two independent uniform directions in R^n."""
    return math.exp(gammaln(n / 2) - gammaln((n + 1) / 2)) / math.sqrt(math.pi)


@dataclass
class OrthogonalityReport:
    n: int
    pairs: int
    mean_abs_cos: float
    q95_abs_cos: float
    reference_asymptotic: float
    reference_exact: float
    excluded_degenerate: int = 0

    def to_dict(self):
        return asdict(self)


def abs_cosines(U: np.ndarray, V: np.ndarray) -> np.ndarray:
    num = np.einsum("ij,ij->i", U, V)
    den = np.sqrt(np.einsum("ij,ij->i", U, U) * np.einsum("ij,ij->i", V, V))
    return np.abs(num / den)


def orthogonality_mc(n: int, pairs: int, rng: np.random.Generator, inject_identical: int = 0) -> OrthogonalityReport:
    """Sample ``pairs`` pairs of uniform directions in R^n (normalized Gaussians).

    The first ``inject_identical`` pairs are replaced by (u, u). Pairs with
    |cos| within 1e-12 of 1 are treated as degenerate and left out of the
    statistics.
    """
    if n < 2 or pairs < 1:
        raise InputError(f"need n >= 2 and pairs >= 1, got n={n}, pairs={pairs}")
    U = rng.standard_normal((pairs, n))
    V = rng.standard_normal((pairs, n))
    k = min(inject_identical, pairs)
    V[:k] = U[:k]
    c = abs_cosines(U, V)
    degenerate = c > 1.0 - 1e-12
    c = c[~degenerate]
    if c.size == 0:
        raise InputError("every sampled pair was degenerate")
    return OrthogonalityReport(n, int(c.size), float(c.mean()), float(np.quantile(c, 0.95)),
                               math.sqrt(2.0 / (math.pi * n)), expected_abs_cosine(n), int(degenerate.sum()))


def gradient_orthogonality(grads) -> dict:
    """Off-diagonal |cos| statistics for one epoch of stored batch gradients."""
    C = batch_cosine_matrix(grads)
    off = np.abs(C[~np.eye(C.shape[0], dtype=bool)])
    off = off[~np.isnan(off)]
    n = int(np.ravel(grads[0]).size)
    return {"n": n, "batches": C.shape[0], "mean_abs_cos": float(off.mean()),
            "q95_abs_cos": float(np.quantile(off, 0.95)), "reference_exact": expected_abs_cosine(n)}


def read_log(path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path} not found")
    out = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: _num(v) for k, v in row.items()})
    return out


def _num(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        return float(v)


def _alpha(rec) -> float:
    a = rec.get("alpha")
    return 1.0 if a is None or not math.isfinite(a) else float(a)


@dataclass
class EquivalenceRecord:
    epoch: int
    batch: int
    modality: int
    in_window: bool
    exact: float
    approximation: float
    cross: float
    identity_rel_err: float
    cross_ratio: float
    telescoping_rel_err: float


@dataclass
class EquivalenceReport:
    records: list[EquivalenceRecord] = field(default_factory=list)
    mode: str = "shadow"

    @property
    def max_identity_rel_err(self) -> float:
        return max((r.identity_rel_err for r in self.records), default=0.0)

    @property
    def max_telescoping_rel_err(self) -> float:
        return max((r.telescoping_rel_err for r in self.records), default=0.0)

    def window_cross_ratio(self, modality: int | None = None) -> float:
        rs = [r.cross_ratio for r in self.records if r.in_window and (modality is None or r.modality == modality)]
        return float(np.median(rs)) if rs else float("nan")

    def summary(self) -> dict:
        mods = sorted({r.modality for r in self.records})
        return {
            "mode": self.mode, "records": len(self.records),
            "max_identity_rel_err": self.max_identity_rel_err,
            "max_telescoping_rel_err": self.max_telescoping_rel_err,
            "median_cross_ratio_in_window": self.window_cross_ratio(),
            "median_cross_ratio_in_window_by_modality": {m: self.window_cross_ratio(m) for m in mods},
            "median_cross_ratio_all": float(np.median([r.cross_ratio for r in self.records])) if self.records else None,
        }


def _rel(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def penalty_equivalence(gradlog: list[dict], mode: str = "shadow", optimizer: str = "sgd") -> EquivalenceReport:
    """Decompose the proximal penalty at every logged (epoch, batch, modality).

    exact  = alpha/2 * |w_b - w_anchor|^2           (from the weights)
    approx = alpha*eta^2/2 * sum_k |g_k|^2          (from gradient norms)
    cross  = alpha*eta^2 * sum_{z<k} g_z . g_k      (from running dot products)

    ``mode="shadow"`` uses task gradients and the shadow weights that move by
    them alone, so exact == approx + cross holds as an identity.
    ``mode="total"`` uses the applied gradients (task + proximal) and the
    real weights.
    """
    if optimizer != "sgd":
        raise ContractError(f"penalty decomposition assumes plain SGD updates, run used {optimizer!r}")
    if mode not in ("shadow", "total"):
        raise InputError(f"mode must be 'shadow' or 'total', got {mode!r}")
    if not gradlog:
        raise InputError("gradient log is empty; rerun with log_gradients enabled")
    disp, dg, cr, ss = (("shadow_disp_sq", "diag", "cross", "sum_sq") if mode == "shadow"
                        else ("actual_disp_sq", "applied_diag", "applied_cross", "applied_sum_sq"))
    rep = EquivalenceReport(mode=mode)
    for rec in gradlog:
        a, eta = _alpha(rec), float(rec["eta"])
        exact = 0.5 * a * rec[disp]
        approx = 0.5 * a * eta * eta * rec[dg]
        cross = a * eta * eta * rec[cr]
        rep.records.append(EquivalenceRecord(
            int(rec["epoch"]), int(rec["batch"]), int(rec["modality"]), rec.get("in_window") == 1,
            exact, approx, cross, _rel(exact, approx + cross),
            abs(cross) / approx if approx > 0 else 0.0, _rel(rec[disp], rec[ss])))
    return rep


@dataclass
class DescentReport:
    regulated: int
    bound_violations: int
    ideal_bound_violations: int
    max_bound_ratio: float
    L_estimate: float | None
    descent_steps: int
    descent_satisfied: int
    mean_reg_task_cosine: float | None
    rows: list[dict] = field(default_factory=list)

    @property
    def bound_holds(self) -> bool:
        return self.bound_violations == 0 and self.ideal_bound_violations == 0

    @property
    def descent_fraction(self) -> float | None:
        return self.descent_satisfied / self.descent_steps if self.descent_steps else None

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("rows")
        d["bound_holds"] = self.bound_holds
        d["descent_fraction"] = self.descent_fraction
        return d


def regulation_bound(alpha: float, eta: float, steps: int, G: float) -> float:
    """Triangle-inequality bound on |alpha * eta * sum of ``steps`` gradients| with norms <= G."""
    return alpha * eta * steps * G


def descent_check(gradlog: list[dict], descent: list[dict] | None = None, L_estimate: float | None = None,
                  rel_tol: float = REL_TOL) -> DescentReport:
    """Check the regulation-gradient bound at every regulated batch.

    Two forms are checked. The implemented penalty gradient at batch b is
    alpha * (w_b - w_anchor) = -alpha*eta * sum_{k<b} ghat_k (applied
    gradients), bounded by alpha*eta*b*G. The idealised form
    alpha*eta^2 * |sum_{k<=b} g_k| over task gradients is bounded by
    alpha*eta^2*(b+1)*G.
    """
    rows, viol, pviol, worst, dots = [], 0, 0, 0.0, []
    for rec in gradlog:
        if not rec.get("active"):
            continue
        a, eta, b = float(rec["alpha"]), float(rec["eta"]), int(rec["batch"])
        bound = regulation_bound(a, eta, b, float(rec["G_applied_prev"]))
        pbound = regulation_bound(a, eta * eta, b + 1, float(rec["G_task"]))
        norm, pnorm = float(rec["reg_grad_norm"]), float(rec["ideal_reg_grad_norm"])
        ok = norm <= bound * (1 + rel_tol)
        pok = pnorm <= pbound * (1 + rel_tol)
        viol += not ok
        pviol += not pok
        if bound > 0:
            worst = max(worst, norm / bound)
        if norm > 0 and rec.get("task_sq"):
            dots.append(float(rec["reg_dot_task"]) / (norm * math.sqrt(rec["task_sq"])))
        rows.append({"epoch": rec["epoch"], "batch": b, "modality": rec["modality"], "alpha": a,
                     "reg_grad_norm": norm, "bound": bound, "ideal_reg_grad_norm": pnorm, "ideal_bound": pbound,
                     "holds": int(ok and pok)})
    steps = sat = 0
    L = L_estimate
    if descent:
        if L is None:
            L = max(0.0, max(float(d["curvature"]) for d in descent))
        for d in descent:
            eta, gsq = float(d["eta"]), float(d["grad_sq"])
            rhs = float(d["loss_before"]) - eta * gsq + 0.5 * L * eta * eta * gsq
            steps += 1
            sat += float(d["loss_after"]) <= rhs + 1e-12 * max(1.0, abs(rhs))
    return DescentReport(len(rows), viol, pviol, worst, L, steps, sat,
                         float(np.mean(dots)) if dots else None, rows)
