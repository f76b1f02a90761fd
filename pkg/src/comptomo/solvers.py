"""Reconstruction solvers: RESESOP-Kaczmarz, Landweber and smoothed TV.

The central method cycles through scalar subproblems ``<row_k, f> = g_k``
and projects the iterate onto stripes around the induced hyperplanes.  The
stripe half-width combines the model-uncertainty bound ``eta_k`` (scaled by
the solution-norm bound ``rho``) with the noise bound ``delta_k``;
subproblems whose residual already satisfies the discrepancy principle
``|<row_k, f> - g_k| <= tau (rho eta_k + delta_k)`` are skipped.  With all
bounds zero this is the classic sequential-subspace/Kaczmarz iteration and
converges to the projection of the start iterate onto the solution set.

All solvers follow the scikit-learn estimator contract: hyperparameters in
``__init__``, data in ``fit``, results in trailing-underscore attributes.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .validation import as_float_array, broadcast_bound, check_rows_data


@dataclass(frozen=True)
class StripeGeometry:
    """The set of x with |<u, x> - alpha| <= xi."""

    u: np.ndarray
    alpha: float
    xi: float

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError(f"stripe half-width must be nonnegative, got {self.xi}")


@dataclass(frozen=True)
class Subproblem:
    """One scalar-valued equation with its uncertainty bounds."""

    row: np.ndarray
    datum: float
    eta: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.eta < 0 or self.delta < 0:
            raise ValueError("uncertainty bounds must be nonnegative")


def stack_subproblems(subproblems):
    """Stack a list of Subproblem into (rows, data, eta, delta) arrays."""
    rows = np.stack([np.asarray(s.row, dtype=float) for s in subproblems])
    data = np.array([s.datum for s in subproblems], dtype=float)
    eta = np.array([s.eta for s in subproblems], dtype=float)
    delta = np.array([s.delta for s in subproblems], dtype=float)
    return rows, data, eta, delta


def project_hyperplane(x, u, alpha):
    """Orthogonal projection of x onto the hyperplane <u, .> = alpha."""
    x = as_float_array(x, "x", ndim=1)
    u = as_float_array(u, "u", ndim=1)
    norm2 = float(u @ u)
    if norm2 == 0.0:
        raise ValueError("cannot project onto a hyperplane with zero normal")
    return x - ((u @ x - alpha) / norm2) * u


def project_stripe(x, stripe):
    """Projection onto a stripe from its upper half-space.

    The caller must sit in ``H_>(u, alpha + xi)``; the result lands on the
    upper stripe boundary ``<u, .> = alpha + xi``.
    """
    x = as_float_array(x, "x", ndim=1)
    u = as_float_array(stripe.u, "stripe.u", ndim=1)
    norm2 = float(u @ u)
    if norm2 == 0.0:
        raise ValueError("cannot project onto a stripe with zero normal")
    excess = float(u @ x) - (stripe.alpha + stripe.xi)
    if excess < -1e-12 * max(1.0, abs(stripe.alpha) + stripe.xi):
        raise ValueError(
            "iterate is not in the upper half-space of the stripe boundary"
        )
    return x - (excess / norm2) * u


@dataclass
class SolveTrace:
    """Per-run bookkeeping of the Kaczmarz sweeps.

    ``stopping_index`` is the first sweep in which every subproblem
    satisfied the discrepancy principle (None if that never happened).
    """

    n_sweeps: int = 0
    stopping_index: object = None
    satisfied: np.ndarray = None
    final_residuals: np.ndarray = None
    max_step: float = 0.0
    infeasible: list = field(default_factory=list)
    updates_per_sweep: list = field(default_factory=list)
    iterate_history: list = field(default_factory=list)

    def write_text(self, path):
        """Line-delimited sweep records (sweep, updates, action summary)."""
        with open(path, "w", encoding="utf-8") as fh:
            for sweep, n_up in enumerate(self.updates_per_sweep):
                action = "project" if n_up else "skip"
                fh.write(f"sweep={sweep} updates={n_up} action={action}\n")
            if self.stopping_index is not None:
                fh.write(f"stopping_index={self.stopping_index}\n")
            fh.write(f"max_step={self.max_step:.6g}\n")
            for k in self.infeasible:
                fh.write(f"infeasible_subproblem={k}\n")


class ResesopKaczmarz(BaseEstimator):
    """Regularised sequential subspace optimisation, one search direction.

    Parameters
    ----------
    tau : float
        Discrepancy multiplier, > 1.
    rho : float
        Norm bound on the sought solution; scales the model-uncertainty
        part of the stripe width.
    max_sweeps : int
        Sweep budget over all subproblems.
    tol : float
        Extra absolute residual tolerance under which a subproblem counts
        as satisfied even when its uncertainty bounds are zero (lets the
        exact-data variant terminate at numerical convergence).
    record_history : bool
        Keep a copy of the iterate after every sweep (small problems only).

    Attributes
    ----------
    coef_ : ndarray
        Final iterate.
    trace_ : SolveTrace
    """

    def __init__(self, tau=1.01, rho=1.0, max_sweeps=2000, tol=0.0,
                 record_history=False):
        self.tau = tau
        self.rho = rho
        self.max_sweeps = max_sweeps
        self.tol = tol
        self.record_history = record_history

    def _validate(self, rows, data, eta, delta, f0):
        if self.tau <= 1.0:
            raise ValueError(f"tau must exceed 1, got {self.tau}")
        if self.rho <= 0.0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        rows, data = check_rows_data(rows, data)
        n = rows.shape[0]
        eta = broadcast_bound(eta, n, "eta")
        delta = broadcast_bound(delta, n, "delta")
        if f0 is None:
            f0 = np.zeros(rows.shape[1])
        f0 = as_float_array(f0, "f0", ndim=1).copy()
        if np.linalg.norm(f0) > self.rho * (1.0 + 1e-12):
            raise ValueError("start iterate lies outside the rho ball")
        return rows, data, eta, delta, f0

    def fit(self, rows, data, eta=None, delta=None, f0=None, callback=None):
        """Run the stripe-projection sweeps.

        Parameters
        ----------
        rows : ndarray, shape (K, D)
            Stacked subproblem functionals.
        data : ndarray, shape (K,)
        eta, delta : scalar or (K,) arrays
            Model-uncertainty and noise bounds per subproblem.
        f0 : ndarray, optional
            Start iterate in the rho ball (default zero).
        callback : callable, optional
            Invoked after every projection with a dict carrying the sweep,
            subproblem index, residual, stripe width and iterate copies
            (meant for diagnostics on small systems).
        """
        rows, data, eta, delta, f = self._validate(rows, data, eta, delta, f0)
        n = rows.shape[0]
        width = self.rho * eta + delta  # stripe half-width per unit |w|
        thresh = np.maximum(self.tau * width, self.tol)
        row_norm2 = np.einsum("ij,ij->i", rows, rows)

        trace = SolveTrace()
        trace.satisfied = np.zeros(n, dtype=bool)
        stopped = False
        infeasible = set()

        for sweep in range(self.max_sweeps):
            n_updates = 0
            for k in range(n):
                w = float(rows[k] @ f - data[k])
                if abs(w) <= thresh[k]:
                    continue
                if row_norm2[k] == 0.0:
                    # zero functional with unmet discrepancy: flag and skip
                    infeasible.add(k)
                    continue
                # projection onto the stripe H(w row_k, w g_k, width |w|)
                step = (w - np.copysign(width[k], w)) / row_norm2[k]
                t_n = (w * w - width[k] * abs(w)) / (w * w * row_norm2[k])
                if callback is not None:
                    before = f.copy()
                f = f - step * rows[k]
                n_updates += 1
                trace.max_step = max(trace.max_step, abs(t_n))
                if callback is not None:
                    callback(
                        {
                            "sweep": sweep,
                            "index": k,
                            "residual": w,
                            "width": width[k],
                            "u": w * rows[k],
                            "alpha": w * data[k],
                            "xi": width[k] * abs(w),
                            "before": before,
                            "after": f.copy(),
                        }
                    )
            trace.updates_per_sweep.append(n_updates)
            if self.record_history:
                trace.iterate_history.append(f.copy())
            if n_updates == 0:
                trace.stopping_index = sweep
                stopped = True
                break

        trace.n_sweeps = len(trace.updates_per_sweep)
        residuals = rows @ f - data
        trace.final_residuals = residuals
        trace.satisfied = np.abs(residuals) <= thresh
        trace.infeasible = sorted(infeasible)
        if not stopped and bool(trace.satisfied.all()):
            trace.stopping_index = trace.n_sweeps

        self.coef_ = f
        self.trace_ = trace
        return self


class SesopKaczmarz(ResesopKaczmarz):
    """Exact-model variant: all uncertainty bounds are zero.

    ``tol`` sets the numerical convergence threshold on the residuals.
    """

    def __init__(self, rho=1.0, max_sweeps=2000, tol=1e-13, record_history=False):
        super().__init__(
            tau=1.01,
            rho=rho,
            max_sweeps=max_sweeps,
            tol=tol,
            record_history=record_history,
        )

    def fit(self, rows, data, f0=None, callback=None):
        return super().fit(
            rows, data, eta=None, delta=None, f0=f0, callback=callback
        )


class Landweber(BaseEstimator):
    """Gradient descent on the least-squares functional, early stopping.

    The iteration count is the regularisation parameter.  The step size
    must satisfy ``0 < step < 2 / ||A||^2``; when omitted it defaults to
    ``1 / ||A||^2`` with the norm estimated by power iteration.
    """

    def __init__(self, step_size=None, iterations=100):
        self.step_size = step_size
        self.iterations = iterations

    @staticmethod
    def _norm2_estimate(matrix):
        # deterministic power iteration on A^T A
        v = np.ones(matrix.shape[1])
        v /= np.linalg.norm(v)
        lam = 0.0
        for _ in range(60):
            w = matrix.T @ (matrix @ v)
            lam = float(np.linalg.norm(w))
            if lam == 0.0:
                return 0.0
            v = w / lam
        return lam

    def fit(self, rows, data, f0=None):
        rows, data = check_rows_data(rows, data)
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        norm2 = self._norm2_estimate(rows)
        if self.step_size is None:
            step = 1.0 / norm2 if norm2 > 0 else 1.0
        else:
            step = float(self.step_size)
            if not 0.0 < step < 2.0 / max(norm2, 1e-300):
                raise ValueError(
                    f"step size {step} outside (0, 2/||A||^2) with ||A||^2 ~ {norm2:.4g}"
                )
        f = (
            np.zeros(rows.shape[1])
            if f0 is None
            else as_float_array(f0, "f0", ndim=1).copy()
        )
        history = []
        for _ in range(self.iterations):
            residual = data - rows @ f
            history.append(float(np.linalg.norm(residual)))
            f = f + step * (rows.T @ residual)
        history.append(float(np.linalg.norm(data - rows @ f)))

        self.coef_ = f
        self.residual_history_ = np.array(history)
        self.step_size_ = step
        return self


def tv_objective_and_gradient(image, lam, beta):
    """Smoothed total variation and its gradient on an (N, M) image."""
    dx = np.zeros_like(image)
    dy = np.zeros_like(image)
    dx[:-1, :] = image[1:, :] - image[:-1, :]
    dy[:, :-1] = image[:, 1:] - image[:, :-1]
    mag = np.sqrt(dx * dx + dy * dy + beta)
    value = lam * float(mag.sum())

    px = dx / mag
    py = dy / mag
    grad = np.zeros_like(image)
    grad[:-1, :] -= px[:-1, :]
    grad[1:, :] += px[:-1, :]
    grad[:, :-1] -= py[:, :-1]
    grad[:, 1:] += py[:, :-1]
    return value, lam * grad


class TVReconstructor(BaseEstimator):
    """Gradient descent on ``||B f - g||^2 + lam * sum sqrt(|grad f|^2 + beta)``.

    With ``rows=None`` the operator is the identity and this is TV
    denoising.  A backtracking line search guarantees monotone decrease of
    the objective.

    Parameters
    ----------
    lam : float
        Regularisation weight, >= 0.
    beta : float
        Smoothing of the gradient magnitude, > 0.
    steps : int
        Number of accepted descent steps.
    grid_shape : tuple
        Image shape the coefficient vector reshapes to.
    step_size : float
        Initial line-search step.
    """

    def __init__(self, lam=1.0, beta=1e-4, steps=100, grid_shape=None,
                 step_size=None):
        self.lam = lam
        self.beta = beta
        self.steps = steps
        self.grid_shape = grid_shape
        self.step_size = step_size

    def _objective(self, rows, data, f, shape):
        if rows is None:
            residual = f - data
        else:
            residual = rows @ f - data
        value = float(residual @ residual)
        tv_val, tv_grad = tv_objective_and_gradient(
            f.reshape(shape), self.lam, self.beta
        )
        if rows is None:
            grad = 2.0 * residual
        else:
            grad = 2.0 * (rows.T @ residual)
        return value + tv_val, grad + tv_grad.ravel()

    def fit(self, rows, data, f0=None):
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        data = as_float_array(np.asarray(data).ravel(), "data")
        if rows is not None:
            rows, data = check_rows_data(rows, data)
            dim = rows.shape[1]
        else:
            dim = data.size
        if self.grid_shape is None:
            side = int(round(np.sqrt(dim)))
            if side * side != dim:
                raise ValueError("grid_shape required for non-square image vectors")
            shape = (side, side)
        else:
            shape = tuple(self.grid_shape)
        if int(np.prod(shape)) != dim:
            raise ValueError(f"grid_shape {shape} does not match dimension {dim}")

        f = (
            data.copy()
            if rows is None and f0 is None
            else np.zeros(dim)
            if f0 is None
            else as_float_array(f0, "f0", ndim=1).copy()
        )
        value, grad = self._objective(rows, data, f, shape)
        step = self.step_size or 1.0 / max(np.linalg.norm(grad), 1e-12)
        objective_history = [value]
        for _ in range(self.steps):
            gnorm2 = float(grad @ grad)
            if gnorm2 == 0.0:
                break
            accepted = False
            for _ in range(50):
                candidate = f - step * grad
                cand_value, cand_grad = self._objective(rows, data, candidate, shape)
                if cand_value <= value - 1e-4 * step * gnorm2:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            f, value, grad = candidate, cand_value, cand_grad
            objective_history.append(value)
            step *= 1.3  # let the line search recover after cautious steps

        self.coef_ = f
        self.grid_shape_ = shape
        self.objective_history_ = np.array(objective_history)
        return self


class ResesopTV(ResesopKaczmarz):
    """RESESOP sweeps interleaved with a few TV-denoising steps.

    Every ``tv_every`` sweeps the current iterate is denoised by
    ``tv_steps`` descent steps on the identity-operator TV objective; the
    run ends when a RESESOP segment stops on its own or the total sweep
    budget is exhausted.  With ``lam = 0`` the trajectory coincides with
    plain RESESOP.
    """

    def __init__(self, tau=1.01, rho=1.0, max_sweeps=2000, tol=0.0,
                 tv_every=100, tv_steps=10, lam=1.0, beta=1e-4,
                 grid_shape=None):
        super().__init__(tau=tau, rho=rho, max_sweeps=max_sweeps, tol=tol)
        self.tv_every = tv_every
        self.tv_steps = tv_steps
        self.lam = lam
        self.beta = beta
        self.grid_shape = grid_shape

    def fit(self, rows, data, eta=None, delta=None, f0=None):
        if self.tv_every < 1:
            raise ValueError("tv_every must be at least 1")
        rows, data = check_rows_data(rows, data)
        segment = ResesopKaczmarz(
            tau=self.tau, rho=self.rho, max_sweeps=self.tv_every, tol=self.tol
        )
        denoiser = TVReconstructor(
            lam=self.lam,
            beta=self.beta,
            steps=self.tv_steps,
            grid_shape=self.grid_shape,
        )
        f = f0
        sweeps_left = self.max_sweeps
        trace = SolveTrace()
        while sweeps_left > 0:
            segment.set_params(max_sweeps=min(self.tv_every, sweeps_left))
            segment.fit(rows, data, eta=eta, delta=delta, f0=f)
            f = segment.coef_
            seg_trace = segment.trace_
            trace.updates_per_sweep.extend(seg_trace.updates_per_sweep)
            trace.max_step = max(trace.max_step, seg_trace.max_step)
            trace.infeasible = sorted(
                set(trace.infeasible) | set(seg_trace.infeasible)
            )
            sweeps_left -= seg_trace.n_sweeps
            if seg_trace.updates_per_sweep[-1] == 0:
                # a whole sweep passed without updates: RESESOP stopped
                trace.stopping_index = len(trace.updates_per_sweep) - 1
                break
            if sweeps_left <= 0:
                break
            if self.lam > 0 and self.tv_steps > 0:
                denoiser.fit(None, f, f0=f)
                f = denoiser.coef_
        trace.n_sweeps = len(trace.updates_per_sweep)
        trace.final_residuals = rows @ f - data
        width = self.rho * broadcast_bound(eta, rows.shape[0], "eta") + broadcast_bound(
            delta, rows.shape[0], "delta"
        )
        trace.satisfied = np.abs(trace.final_residuals) <= np.maximum(
            self.tau * width, self.tol
        )
        self.coef_ = f
        self.trace_ = trace
        return self
