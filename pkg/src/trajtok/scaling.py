"""Data-constrained scaling law at fixed model size.

    L = B / D'**beta + E,   D' = U_D + U_D * R_star * (1 - exp(-R_D / R_star))

``fit`` seeds (beta, R_star) on a log grid with (B, E) solved by linear least
squares in each cell, then refines all four parameters with Levenberg-Marquardt
(B, beta and R_star in log space). Refinement only accepts steps that lower
the residual, so the result is never worse than the best grid cell.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

GRID_BETA = (0.01, 2.0)
GRID_R_STAR = (0.1, 100.0)
GRID_SIZE = 50
MAX_ITER = 200


class ScalingFitError(ValueError):
    """Not enough data to fit (fewer than 4 observations or a single R_D value)."""


class DegenerateFitError(ScalingFitError):
    """The data carry no signal for the exponent (constant loss) or the fit broke down numerically."""


class ScalingCSVError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, path=None):
        self.lineno = lineno
        self.path = path
        where = f"{path or '<csv>'}:{lineno}: " if lineno is not None else ""
        super().__init__(where + message)


@dataclass(frozen=True)
class ScalingParams:
    B: float
    beta: float
    E: float
    R_star: float

    def __post_init__(self):
        for name in ("B", "beta", "E", "R_star"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        if self.B <= 0 or self.beta <= 0 or self.R_star <= 0:
            raise ValueError(f"B, beta and R_star must be > 0, got {self}")
        if self.E < 0:
            raise ValueError(f"E must be >= 0, got {self.E}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.B, self.beta, self.E, self.R_star)

    def to_dict(self) -> dict:
        return {"B": self.B, "beta": self.beta, "E": self.E, "R_star": self.R_star}


@dataclass(frozen=True)
class ScalingObservation:
    U_D: float
    R_D: float
    loss: float

    def __post_init__(self):
        u, r, l = float(self.U_D), float(self.R_D), float(self.loss)
        if not (math.isfinite(u) and u > 0):
            raise ValueError(f"U_D must be finite and > 0, got {self.U_D!r}")
        if not (math.isfinite(r) and r >= 0):
            raise ValueError(f"R_D must be finite and >= 0, got {self.R_D!r}")
        if not math.isfinite(l):
            raise ValueError(f"loss must be finite, got {self.loss!r}")
        object.__setattr__(self, "U_D", u)
        object.__setattr__(self, "R_D", r)
        object.__setattr__(self, "loss", l)


@dataclass(frozen=True)
class FitResult:
    params: ScalingParams
    residual_norm: float
    grid_residual: float
    converged: bool
    iterations: int
    n_obs: int

    def to_dict(self) -> dict:
        return {
            **self.params.to_dict(),
            "residual_norm": self.residual_norm,
            "grid_residual": self.grid_residual,
            "converged": self.converged,
            "iterations": self.iterations,
            "n_obs": self.n_obs,
        }


def effective_data(U_D, R_D, R_star):
    """Repetition-discounted data amount; scalar in, float out, arrays broadcast."""
    u = np.asarray(U_D, dtype=float)
    r = np.asarray(R_D, dtype=float)
    rs = np.asarray(R_star, dtype=float)
    if np.any(~(u > 0)) or np.any(~(r >= 0)) or np.any(~(rs > 0)):
        raise ValueError("effective_data needs U_D > 0, R_D >= 0 and R_star > 0")
    out = u + u * rs * -np.expm1(-r / rs)
    return float(out) if out.ndim == 0 else out


def predict_loss(params: ScalingParams, U_D, R_D):
    d = effective_data(U_D, R_D, params.R_star)
    out = params.B * np.power(d, -params.beta) + params.E
    return float(out) if np.ndim(out) == 0 else out


def _arrays(observations) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    obs = [o if isinstance(o, ScalingObservation) else ScalingObservation(*o) for o in observations]
    if not obs:
        return np.empty(0), np.empty(0), np.empty(0)
    a = np.array([(o.U_D, o.R_D, o.loss) for o in obs])
    return a[:, 0], a[:, 1], a[:, 2]


def _linear_be(x: np.ndarray, y: np.ndarray):
    """Least squares y ~ B*x + E with B > 0 and E >= 0, batched over leading axes of x.

    Returns (B, E, ssr); cells with no positive-B solution get ssr = inf.
    """
    xm = x.mean(-1, keepdims=True)
    ym = y.mean()
    sxx = ((x - xm) ** 2).sum(-1)
    sxy = ((x - xm) * (y - ym)).sum(-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        B = np.where(sxx > 0, sxy / sxx, 0.0)
    E = ym - B * xm[..., 0]
    # E < 0 infeasible: refit through the origin
    neg = E < 0
    with np.errstate(divide="ignore", invalid="ignore"):
        B0 = (x * y).sum(-1) / (x * x).sum(-1)
    B = np.where(neg, B0, B)
    E = np.where(neg, 0.0, E)
    ssr = ((B[..., None] * x + E[..., None] - y) ** 2).sum(-1)
    ssr = np.where((B > 0) & np.isfinite(ssr), ssr, np.inf)
    return B, E, ssr


def grid_seed(U, R, L, beta_range=GRID_BETA, r_star_range=GRID_R_STAR, size: int = GRID_SIZE):
    """Best (B, beta, E, R_star, ssr) over a log grid; ties go to the lowest cell index."""
    betas = np.geomspace(beta_range[0], beta_range[1], size)
    rstars = np.geomspace(r_star_range[0], r_star_range[1], size)
    d = effective_data(U[None, :], R[None, :], rstars[:, None])  # (size_r, N)
    x = np.power(d[None, :, :], -betas[:, None, None])  # (size_b, size_r, N)
    B, E, ssr = _linear_be(x, L)
    if not np.any(np.isfinite(ssr)):
        raise DegenerateFitError("no grid cell admits a positive loss scale B")
    ib, ir = np.unravel_index(int(np.argmin(ssr)), ssr.shape)
    return float(B[ib, ir]), float(betas[ib]), float(E[ib, ir]), float(rstars[ir]), float(ssr[ib, ir])


def _model(theta, U, R):
    """Loss and Jacobian w.r.t. (log B, log beta, E, log R_star)."""
    B, beta, E, rs = math.exp(theta[0]), math.exp(theta[1]), theta[2], math.exp(theta[3])
    ex = np.exp(-R / rs)
    d = U + U * rs * -np.expm1(-R / rs)
    p = B * np.power(d, -beta)
    f = p + E
    J = np.empty((len(U), 4))
    J[:, 0] = p
    J[:, 1] = -beta * np.log(d) * p
    J[:, 2] = 1.0
    dd_drs = U * (-np.expm1(-R / rs) - (R / rs) * ex)
    J[:, 3] = rs * (-beta * p / d) * dd_drs
    return f, J


def _ssr(theta, U, R, L) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        f, _ = _model(theta, U, R)
    v = float(((f - L) ** 2).sum())
    return v if math.isfinite(v) else math.inf


def fit(observations: Iterable, beta_range=GRID_BETA, r_star_range=GRID_R_STAR, grid_size: int = GRID_SIZE, max_iter: int = MAX_ITER) -> FitResult:
    U, R, L = _arrays(observations)
    if len(L) < 4:
        raise ScalingFitError(f"need at least 4 observations, got {len(L)}")
    if len(np.unique(R)) < 2:
        raise ScalingFitError("need at least 2 distinct R_D values")
    if np.ptp(L) <= 1e-12 * max(1.0, float(np.abs(L).max())):
        raise DegenerateFitError("loss is constant; the exponent and decay constant are not identifiable")
    B0, beta0, E0, rs0, _ = grid_seed(U, R, L, beta_range, r_star_range, grid_size)

    theta = np.array([math.log(B0), math.log(beta0), E0, math.log(rs0)])
    # evaluate the seed with the same arithmetic as the refinement so the comparison is exact
    cur = grid_ssr = _ssr(theta, U, R, L)
    if not math.isfinite(cur):
        raise DegenerateFitError("residual at the grid seed is not finite")
    lam = 1e-3
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            f, J = _model(theta, U, R)
        r = L - f
        JTJ = J.T @ J
        g = J.T @ r
        # scale-invariant stopping: gradient small relative to curvature and residual
        if np.all(np.abs(g) <= 1e-12 * (np.sqrt(np.diag(JTJ)) * max(math.sqrt(cur), 1e-300) + 1e-300)) or cur == 0.0:
            converged = True
            break
        improved = False
        while lam < 1e16:
            A = JTJ + lam * np.diag(np.maximum(np.diag(JTJ), 1e-300))
            try:
                step = np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            cand = theta + step
            cand[2] = max(cand[2], 0.0)  # E >= 0
            new = _ssr(cand, U, R, L)
            if new < cur:
                rel = (cur - new) / max(cur, 1e-300)
                theta, cur = cand, new
                lam = max(lam / 10, 1e-12)
                improved = True
                break
            lam *= 10
        if not improved:
            # no descent direction left at any damping: a local minimum to machine precision
            converged = True
            break
        if rel < 1e-15:
            converged = True
            break
    params = ScalingParams(math.exp(theta[0]), math.exp(theta[1]), float(theta[2]), math.exp(theta[3]))
    return FitResult(params, math.sqrt(cur), math.sqrt(grid_ssr), converged, it, len(L))


# ----------------------------------------------------------------------------
# IO


def read_observations_csv(text: str, path=None) -> list[ScalingObservation]:
    """Parse ``U_D,R_D,loss`` rows; a header line is optional, ``#`` lines and blank lines are skipped."""
    out = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
            continue
        cells = [c.strip() for c in row]
        if not out and [c.lower() for c in cells] == ["u_d", "r_d", "loss"]:
            continue
        if len(cells) != 3:
            raise ScalingCSVError(f"expected 3 columns (U_D,R_D,loss), got {len(cells)}", lineno, path)
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise ScalingCSVError(f"non-numeric value in {cells}", lineno, path) from None
        try:
            out.append(ScalingObservation(*vals))
        except ValueError as e:
            raise ScalingCSVError(str(e), lineno, path) from None
    return out


def read_observations(path) -> list[ScalingObservation]:
    with open(path, encoding="utf-8") as fh:
        return read_observations_csv(fh.read(), path)


def observations_csv(observations: Sequence[ScalingObservation]) -> str:
    lines = ["U_D,R_D,loss"] + [f"{o.U_D!r},{o.R_D!r},{o.loss!r}" for o in observations]
    return "\n".join(lines) + "\n"


def prediction_dump(params: ScalingParams, observations: Sequence[ScalingObservation], n_points: int = 101) -> str:
    """gnuplot-friendly text: one block per U_D (blank-line separated), columns R_D, predicted, observed.

    Curve rows carry ``nan`` in the observed column; observed rows are
    interleaved at their R_D.
    """
    by_u: dict[float, list[ScalingObservation]] = {}
    for o in observations:
        by_u.setdefault(o.U_D, []).append(o)
    out = [
        f"# B={params.B!r} beta={params.beta!r} E={params.E!r} R_star={params.R_star!r}",
        "# columns: R_D predicted_loss observed_loss",
    ]
    for u in sorted(by_u):
        obs = sorted(by_u[u], key=lambda o: o.R_D)
        r_max = max(o.R_D for o in obs)
        grid = np.linspace(0.0, r_max, n_points) if r_max > 0 else np.zeros(1)
        rows = [(float(r), math.nan) for r in grid] + [(o.R_D, o.loss) for o in obs]
        rows.sort(key=lambda t: (t[0], not math.isnan(t[1])))
        out.append(f"# U_D={u!r}")
        for r, l in rows:
            out.append(f"{r!r} {predict_loss(params, u, r)!r} {l!r}")
        out.append("")
        out.append("")
    return "\n".join(out)


def synthetic_observations(params: ScalingParams, U_values=(0.25, 0.5, 1.0, 2.0, 4.0, 8.0), R_values=None, noise: float = 0.0, seed=None) -> list[ScalingObservation]:
    """Observations drawn exactly from the law, with optional multiplicative Gaussian noise (sigma = noise * loss)."""
    if R_values is None:
        R_values = np.linspace(0.0, 40.0, 25)
    rng = np.random.default_rng(seed)
    out = []
    for u in U_values:
        for r in R_values:
            l = predict_loss(params, u, r)
            if noise:
                l = l * (1.0 + noise * rng.standard_normal())
            out.append(ScalingObservation(u, r, l))
    return out
