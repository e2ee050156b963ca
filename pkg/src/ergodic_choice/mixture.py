"""Latent-mixture model selection over three utility families.

Each subject carries an indicator z in {time_optimal, isoelastic,
prospect_theory}. Branch structure:

* time_optimal: per-condition eta with the population mean fixed at the
  growth-optimal value (0 additive, 1 multiplicative) and a free
  population sd on [0.01, 1.6] per condition.
* isoelastic: one eta per subject shared across both conditions;
  mu ~ U(-2.5, 2.5), sigma ~ U(0, 1.6].
* prospect_theory: per-subject curvature ln alpha_gain, ln alpha_loss
  (normal truncated below 0, so alpha in (0,1); group means on
  [-2.3, 0]) and loss aversion ln lambda (normal truncated to [0, ln 5]
  by default; group mean on [0, 1.6]). Value is applied to the absolute
  wealth increment of each outcome, so it is condition-invariant.

The sensitivity hierarchy ln beta_{i,c} ~ N(mu_beta_c, sigma_beta_c) is
shared by all branches. Sampling is Metropolis-within-Gibbs as in the
estimation sampler, plus three indicator-specific devices. Parameters of
branches a subject does not currently occupy are refreshed by exact draws
from per-subject pseudo-priors (profile fits computed once per dataset);
z is Gibbs-sampled from the current branch likelihoods times the uniform
1/3 prior, corrected by each branch's group-prior over pseudo-prior
density ratio, which keeps the chain exactly invariant and carries the
branches' Occam factors. A Metropolized jump then proposes z together
with branch-matched sensitivities, because the shared sensitivity fitted
to one branch can sit orders of magnitude off the scale a rival branch
requires — with group-prior refreshes and a fixed sensitivity, indicators
freeze at their initial assignment as soon as choices are decisive.
Group-level hyperparameters condition only on currently assigned
subjects.

Group-level comparison fits a Dirichlet random-effects model to the
per-subject model probabilities by the standard variational update,
draws exceedance probabilities by Monte Carlo, and protects them with
the Bayesian omnibus risk (the posterior probability that model
frequencies are exactly uniform).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, gammaln, ndtr, ndtri

from .dynamics import Dynamic, wealth_increment
from .mcmc import (
    INIT_LN_BETA_RANGE,
    MAX_REINITS,
    MU_BETA_SUPPORT,
    MU_ETA_SUPPORT,
    SIGMA_BETA_SUPPORT,
    SIGMA_ETA_SUPPORT,
    THETA_FLOOR,
    SamplerConfig,
    _BlockTuner,
    _in_support,
    _log_normal_pdf,
    selection_config,
)
from .records import Choice, SubjectDataset

MODEL_NAMES = ("time_optimal", "isoelastic", "prospect_theory")
TIME_OPTIMAL_ETA = {Dynamic.ADDITIVE: 0.0, Dynamic.MULTIPLICATIVE: 1.0}
SIGMA_ETA_T_SUPPORT = (0.01, 1.6)
MU_ALPHA_SUPPORT = (-2.3, 0.0)
SIGMA_ALPHA_SUPPORT = (0.0, 1.6)
MU_LAMBDA_SUPPORT = (0.0, 1.6)
SIGMA_LAMBDA_SUPPORT = (0.0, 1.6)
LN_LAMBDA_BOUNDS = (0.0, math.log(5.0))

_SIGNS = np.array([0.5, 0.5, -0.5, -0.5])


@dataclass(frozen=True)
class MixtureSpec:
    """Structural switches of the latent-mixture model."""

    truncate_lambda: bool = True


@dataclass(frozen=True)
class MixtureScales:
    """Initial random-walk scales for the mixture sampler blocks."""

    eta_t: float = 0.25
    eta_iso: float = 0.25
    ln_alpha: float = 0.25
    ln_lambda: float = 0.25
    ln_beta: float = 0.4
    hyper: float = 0.15


@dataclass(frozen=True, eq=False)
class _ConditionBlock:
    condition: Dynamic
    ln_after: np.ndarray
    dx: np.ndarray
    ln_abs_dx: np.ndarray
    y: np.ndarray
    subject_index: np.ndarray
    n_subjects: int


def _build_block(
    condition: Dynamic, datasets: Sequence[SubjectDataset]
) -> _ConditionBlock:
    rows_after: list[list[float]] = []
    rows_dx: list[list[float]] = []
    ys: list[float] = []
    idx: list[int] = []
    for i, ds in enumerate(datasets):
        for t in ds.trials:
            if t.choice is Choice.TIMEOUT:
                continue
            pair = t.pair()
            after: list[float] = []
            dxs: list[float] = []
            for gamble in (pair.left, pair.right):
                for outcome in gamble.outcomes:
                    dx = wealth_increment(ds.wealth, outcome)
                    a = ds.wealth + dx
                    if a <= 0:
                        raise ValueError(
                            f"subject {ds.subject} trial {t.index}: outcome "
                            f"drives wealth to {a}; utility undefined"
                        )
                    after.append(math.log(a))
                    dxs.append(dx)
            rows_after.append(after)
            rows_dx.append(dxs)
            ys.append(1.0 if t.choice is Choice.LEFT else -1.0)
            idx.append(i)
    dx_arr = np.array(rows_dx, dtype=float).reshape(len(rows_dx), 4)
    with np.errstate(divide="ignore"):
        ln_abs = np.where(dx_arr != 0.0, np.log(np.abs(dx_arr)), 0.0)
    return _ConditionBlock(
        condition=condition,
        ln_after=np.array(rows_after, dtype=float).reshape(len(rows_after), 4),
        dx=dx_arr,
        ln_abs_dx=ln_abs,
        y=np.array(ys, dtype=float),
        subject_index=np.array(idx, dtype=np.intp),
        n_subjects=len(datasets),
    )


def _iso_delta_u(block: _ConditionBlock, eta: np.ndarray) -> np.ndarray:
    e = 1.0 - np.asarray(eta, dtype=float)
    e_rows = e[block.subject_index]
    near_log = np.abs(e_rows) < 1e-10
    e_safe = np.where(near_log, 1.0, e_rows)
    with np.errstate(over="ignore", invalid="ignore"):
        powered = np.exp(block.ln_after * e_safe[:, None])
        du = (powered @ _SIGNS) / e_safe
    return np.where(near_log, block.ln_after @ _SIGNS, du)


def _pt_delta_u(
    block: _ConditionBlock,
    ln_a_gain: np.ndarray,
    ln_a_loss: np.ndarray,
    ln_lam: np.ndarray,
) -> np.ndarray:
    a_gain = np.exp(ln_a_gain)[block.subject_index][:, None]
    a_loss = np.exp(ln_a_loss)[block.subject_index][:, None]
    lam = np.exp(ln_lam)[block.subject_index][:, None]
    pos = block.dx > 0.0
    neg = block.dx < 0.0
    with np.errstate(over="ignore"):
        gain_val = np.exp(a_gain * block.ln_abs_dx)
        loss_val = -lam * np.exp(a_loss * block.ln_abs_dx)
    value = np.where(pos, gain_val, np.where(neg, loss_val, 0.0))
    return value @ _SIGNS


def _block_ll(block: _ConditionBlock, du: np.ndarray, ln_beta: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        z = block.y * np.exp(ln_beta)[block.subject_index] * du
    p = np.clip(expit(z), THETA_FLOOR, 1.0 - THETA_FLOOR)
    terms = np.log(p)
    ll = np.bincount(
        block.subject_index,
        weights=np.where(np.isfinite(terms), terms, -np.inf),
        minlength=block.n_subjects,
    )
    return np.where(np.isfinite(ll), ll, -np.inf)


def _truncnorm_draw(
    rng: np.random.Generator,
    mu,
    sigma,
    lo: float,
    hi: float,
    size: int,
) -> np.ndarray:
    a = ndtr((lo - mu) / sigma) if math.isfinite(lo) else 0.0
    b = ndtr((hi - mu) / sigma) if math.isfinite(hi) else 1.0
    u = a + (b - a) * rng.random(size)
    return mu + sigma * ndtri(np.clip(u, 1e-15, 1.0 - 1e-15))


def _ln_trunc_z(mu: float, sigma: float, lo: float, hi: float) -> float:
    a = ndtr((lo - mu) / sigma) if math.isfinite(lo) else 0.0
    b = ndtr((hi - mu) / sigma) if math.isfinite(hi) else 1.0
    return math.log(max(b - a, 1e-300))


def _ln_trunc_z_arr(mu: np.ndarray, sigma: np.ndarray, lo: float, hi: float) -> np.ndarray:
    a = ndtr((lo - mu) / sigma) if math.isfinite(lo) else 0.0
    b = ndtr((hi - mu) / sigma) if math.isfinite(hi) else 1.0
    return np.log(np.maximum(b - a, 1e-300))


def _log_normal_pdf_arr(x, mu, sigma) -> np.ndarray:
    """Normal log-density with per-element scales."""
    return (
        -0.5 * ((x - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * math.log(2 * math.pi)
    )


# ---------------------------------------------------------------------------
# Per-subject pseudo-priors for the branch parameters.
#
# Refreshing a subject's unoccupied branches from the raw group priors makes
# exchanges between branches depend on a group draw happening to explain the
# data, which essentially never occurs once choices are decisive: indicators
# freeze at their initial assignment. Instead, a cheap profile fit per
# subject and branch (run once per dataset) supplies moment-matched normal
# refresh distributions for the branch parameters and per-branch centres for
# the sensitivity. Indicator updates then weight each branch by
# likelihood x group-prior / refresh-density, which keeps the chain exactly
# invariant under the informed refreshes and lets the weights carry the
# branches' Occam factors.

_PSEUDO_ETA_GRID = np.arange(-2.75, 3.76, 0.1)
_PSEUDO_LNB_GRID = np.arange(-6.5, 6.51, 0.25)
_PSEUDO_SD_FLOOR = 0.06
_PSEUDO_SD_CAP = 2.5
_PSEUDO_SD_INFLATE = 1.5
_PSEUDO_LNB_SD_FLOOR = 0.15
_PSEUDO_LNB_SD_CAP = 2.0
_PSEUDO_LNB_SD_INFLATE = 2.0


@dataclass(frozen=True, eq=False)
class _PseudoPriors:
    """Per-subject, per-branch refresh/proposal distributions."""

    eta_t_m: dict
    eta_t_sd: dict
    iso_m: np.ndarray
    iso_sd: np.ndarray
    pt_m: np.ndarray  # (s, 3): ln alpha_gain, ln alpha_loss, ln lambda
    pt_sd: np.ndarray
    ln_beta_m: dict  # condition -> (s, 3): per-branch sensitivity centres
    ln_beta_sd: dict


def _subject_block(block: _ConditionBlock, i: int) -> _ConditionBlock:
    keep = block.subject_index == i
    return _ConditionBlock(
        condition=block.condition,
        ln_after=block.ln_after[keep],
        dx=block.dx[keep],
        ln_abs_dx=block.ln_abs_dx[keep],
        y=block.y[keep],
        subject_index=np.zeros(int(keep.sum()), dtype=np.intp),
        n_subjects=1,
    )


def _iso_du_grid(sub: _ConditionBlock, etas: np.ndarray) -> np.ndarray:
    e = 1.0 - etas[:, None]
    near = np.abs(e) < 1e-10
    e_safe = np.where(near, 1.0, e)
    with np.errstate(over="ignore", invalid="ignore"):
        powered = np.exp(sub.ln_after[None, :, :] * e_safe[:, :, None])
        du = (powered @ _SIGNS) / e_safe
    return np.where(near, (sub.ln_after @ _SIGNS)[None, :], du)


def _grid_ll(sub: _ConditionBlock, du_grid: np.ndarray, lnbs: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        z = sub.y[None, None, :] * np.exp(lnbs)[None, :, None] * du_grid[:, None, :]
    p = np.clip(expit(z), THETA_FLOOR, 1.0 - THETA_FLOOR)
    return np.log(p).sum(axis=2)


def _wl(x, m, sd):
    """Weak quadratic regulariser; keeps profile fits bounded on flat data."""
    return -0.5 * ((x - m) / sd) ** 2


def _ll_eta_cond(sub: _ConditionBlock, eta: float, lnb: float) -> float:
    du = _iso_delta_u(sub, np.array([eta]))
    return float(_block_ll(sub, du, np.array([lnb]))[0])


def _ll_pt_cond(sub: _ConditionBlock, lga, lla, lnl, lnb) -> float:
    du = _pt_delta_u(sub, np.array([lga]), np.array([lla]), np.array([lnl]))
    return float(_block_ll(sub, du, np.array([lnb]))[0])


def _curv_sds(f, x: np.ndarray, lo: np.ndarray, hi: np.ndarray, h: float = 0.06) -> np.ndarray:
    """Diagonal curvature of a minimised objective, as raw standard deviations."""
    f0 = f(x)
    out = np.empty(x.size)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] = min(x[i] + h, hi[i])
        xm[i] = max(x[i] - h, lo[i])
        dp = xp[i] - x[i]
        dm = x[i] - xm[i]
        if min(dp, dm) > 1e-9:
            curv = (
                2.0
                * (dm * f(xp) + dp * f(xm) - (dp + dm) * f0)
                / (dp * dm * (dp + dm))
            )
        elif hi[i] - x[i] >= 2 * h:  # pinned at the lower bound
            x1 = x.copy()
            x2 = x.copy()
            x1[i] = x[i] + h
            x2[i] = x[i] + 2 * h
            curv = (f0 - 2.0 * f(x1) + f(x2)) / h**2
        elif x[i] - lo[i] >= 2 * h:  # pinned at the upper bound
            x1 = x.copy()
            x2 = x.copy()
            x1[i] = x[i] - h
            x2[i] = x[i] - 2 * h
            curv = (f0 - 2.0 * f(x1) + f(x2)) / h**2
        else:
            out[i] = 10.0
            continue
        out[i] = 1.0 / math.sqrt(max(curv, 1e-8))
    return out


def _shape_sd(raw: float, floor: float, cap: float, inflate: float) -> float:
    return float(min(max(raw * inflate, floor), cap))


def _fit_pseudopriors(blocks: dict, spec: MixtureSpec) -> _PseudoPriors:
    conditions = sorted(blocks, key=lambda c: c.value)
    s = blocks[conditions[0]].n_subjects
    lam_hi = LN_LAMBDA_BOUNDS[1] if spec.truncate_lambda else 3.0
    lam_lo = LN_LAMBDA_BOUNDS[0] if spec.truncate_lambda else -2.0
    lam_mid = 0.5 * (lam_lo + lam_hi)
    etas = _PSEUDO_ETA_GRID
    lnbs = _PSEUDO_LNB_GRID
    bopts = {"maxiter": 200}

    eta_t_m = {c: np.empty(s) for c in conditions}
    eta_t_sd = {c: np.empty(s) for c in conditions}
    iso_m = np.empty(s)
    iso_sd = np.empty(s)
    pt_m = np.empty((s, 3))
    pt_sd = np.empty((s, 3))
    ln_beta_m = {c: np.empty((s, 3)) for c in conditions}
    ln_beta_sd = {c: np.empty((s, 3)) for c in conditions}

    def keep_lnb(c, i, m, value, raw_sd):
        ln_beta_m[c][i, m] = value
        ln_beta_sd[c][i, m] = _shape_sd(
            raw_sd, _PSEUDO_LNB_SD_FLOOR, _PSEUDO_LNB_SD_CAP, _PSEUDO_LNB_SD_INFLATE
        )

    for i in range(s):
        subs = {c: _subject_block(blocks[c], i) for c in conditions}
        grids = {}
        for c in conditions:
            du_grid = _iso_du_grid(subs[c], etas)
            grids[c] = _grid_ll(subs[c], du_grid, lnbs) + _wl(lnbs, 0.0, 4.0)[None, :]

        # time-optimal: independent per condition, anchored near the fixed mean
        for c in conditions:
            score = grids[c] + _wl(etas, TIME_OPTIMAL_ETA[c], 1.5)[:, None]
            j, k = np.unravel_index(int(np.argmax(score)), score.shape)
            lo = np.array([etas[0], lnbs[0]])
            hi = np.array([etas[-1], lnbs[-1]])

            def nf_to(x, c=c):
                return -(
                    _ll_eta_cond(subs[c], x[0], x[1])
                    + _wl(x[0], TIME_OPTIMAL_ETA[c], 1.5)
                    + _wl(x[1], 0.0, 4.0)
                )

            res = minimize(
                nf_to,
                np.array([etas[j], lnbs[k]]),
                method="L-BFGS-B",
                bounds=list(zip(lo, hi)),
                options=bopts,
            )
            sds = _curv_sds(nf_to, res.x, lo, hi)
            eta_t_m[c][i] = res.x[0]
            eta_t_sd[c][i] = _shape_sd(
                sds[0], _PSEUDO_SD_FLOOR, _PSEUDO_SD_CAP, _PSEUDO_SD_INFLATE
            )
            keep_lnb(c, i, 0, res.x[1], sds[1])

        # isoelastic: one eta shared across conditions
        prof = sum(grids[c].max(axis=1) for c in conditions) + _wl(etas, 0.5, 1.5)
        j = int(np.argmax(prof))
        x0 = [etas[j]] + [lnbs[int(np.argmax(grids[c][j]))] for c in conditions]
        lo = np.array([etas[0]] + [lnbs[0]] * len(conditions))
        hi = np.array([etas[-1]] + [lnbs[-1]] * len(conditions))

        def nf_iso(x):
            out = -_wl(x[0], 0.5, 1.5)
            for k2, c in enumerate(conditions):
                out -= _ll_eta_cond(subs[c], x[0], x[1 + k2]) + _wl(
                    x[1 + k2], 0.0, 4.0
                )
            return out

        res = minimize(
            nf_iso, np.array(x0), method="L-BFGS-B",
            bounds=list(zip(lo, hi)), options=bopts,
        )
        sds = _curv_sds(nf_iso, res.x, lo, hi)
        iso_m[i] = res.x[0]
        iso_sd[i] = _shape_sd(sds[0], _PSEUDO_SD_FLOOR, _PSEUDO_SD_CAP, _PSEUDO_SD_INFLATE)
        for k2, c in enumerate(conditions):
            keep_lnb(c, i, 1, res.x[1 + k2], sds[1 + k2])

        # prospect theory: curvature pair plus loss aversion, multi-start
        lo = np.array([-6.0, -6.0, lam_lo] + [lnbs[0]] * len(conditions))
        hi = np.array([-1e-6, -1e-6, lam_hi] + [lnbs[-1]] * len(conditions))

        def nf_pt(x):
            out = -(
                _wl(x[0], -1.15, 1.5)
                + _wl(x[1], -1.15, 1.5)
                + _wl(x[2], lam_mid, 1.2)
            )
            for k2, c in enumerate(conditions):
                out -= _ll_pt_cond(subs[c], x[0], x[1], x[2], x[3 + k2]) + _wl(
                    x[3 + k2], 0.0, 4.0
                )
            return out

        best = None
        for lga0, lla0, lnl0 in (
            (math.log(0.5), math.log(0.5), math.log(2.0)),
            (math.log(0.85), math.log(0.85), math.log(1.15)),
            (math.log(0.3), math.log(0.55), math.log(3.0)),
        ):
            start = [
                min(max(lga0, lo[0]), hi[0]),
                min(max(lla0, lo[1]), hi[1]),
                min(max(lnl0, lam_lo), lam_hi),
            ]
            for c in conditions:
                du = _pt_delta_u(
                    subs[c],
                    np.array([start[0]]),
                    np.array([start[1]]),
                    np.array([start[2]]),
                )
                med = float(np.median(np.abs(du))) if du.size else 1.0
                start.append(min(max(-math.log(med + 1e-12), lnbs[0]), lnbs[-1]))
            res = minimize(
                nf_pt, np.array(start), method="L-BFGS-B",
                bounds=list(zip(lo, hi)), options=bopts,
            )
            if best is None or res.fun < best.fun:
                best = res
        sds = _curv_sds(nf_pt, best.x, lo, hi)
        pt_m[i] = best.x[:3]
        for k2 in range(3):
            pt_sd[i, k2] = _shape_sd(
                sds[k2], _PSEUDO_SD_FLOOR, _PSEUDO_SD_CAP, _PSEUDO_SD_INFLATE
            )
        for k2, c in enumerate(conditions):
            keep_lnb(c, i, 2, best.x[3 + k2], sds[3 + k2])

    return _PseudoPriors(
        eta_t_m=eta_t_m,
        eta_t_sd=eta_t_sd,
        iso_m=iso_m,
        iso_sd=iso_sd,
        pt_m=pt_m,
        pt_sd=pt_sd,
        ln_beta_m=ln_beta_m,
        ln_beta_sd=ln_beta_sd,
    )


@dataclass(frozen=True, eq=False)
class MixtureResult:
    """Pooled z frequencies and the raw indicator draws per chain."""

    subjects: tuple[str, ...]
    model_names: tuple[str, str, str]
    subject_probs: np.ndarray
    z_draws: np.ndarray
    acceptance: dict[str, np.ndarray]
    config: SamplerConfig

    def probability(self, subject: str, model: str) -> float:
        return float(
            self.subject_probs[self.subjects.index(subject), self.model_names.index(model)]
        )

    def modal_model(self, subject: str) -> str:
        row = self.subject_probs[self.subjects.index(subject)]
        return self.model_names[int(np.argmax(row))]


class _MixtureState:
    """Mutable per-chain state plus cached per-branch likelihood vectors."""

    def __init__(self, blocks, spec, rng, n_subjects, pseudos):
        self.blocks = blocks
        self.spec = spec
        self.rng = rng
        self.s = n_subjects
        self.q = pseudos
        lam_hi = LN_LAMBDA_BOUNDS[1] if spec.truncate_lambda else math.inf
        lam_lo = LN_LAMBDA_BOUNDS[0] if spec.truncate_lambda else -math.inf
        self.lam_bounds = (lam_lo, lam_hi)

        # hypers drawn uniformly over their supports
        u = rng.uniform
        self.mu_beta = {c: u(*MU_BETA_SUPPORT) for c in blocks}
        self.sigma_beta = {c: u(*SIGMA_BETA_SUPPORT) for c in blocks}
        self.sigma_eta_t = {c: u(*SIGMA_ETA_T_SUPPORT) for c in blocks}
        self.mu_eta = u(*MU_ETA_SUPPORT)
        self.sigma_eta = u(0.05, SIGMA_ETA_SUPPORT[1])
        self.mu_a_gain = u(*MU_ALPHA_SUPPORT)
        self.sigma_a_gain = u(0.05, SIGMA_ALPHA_SUPPORT[1])
        self.mu_a_loss = u(*MU_ALPHA_SUPPORT)
        self.sigma_a_loss = u(0.05, SIGMA_ALPHA_SUPPORT[1])
        self.mu_lambda = u(*MU_LAMBDA_SUPPORT)
        self.sigma_lambda = u(0.05, SIGMA_LAMBDA_SUPPORT[1])

        self.z = rng.integers(0, 3, size=n_subjects)
        self.ln_beta = {c: u(*INIT_LN_BETA_RANGE, size=n_subjects) for c in blocks}
        self.eta_t = {
            c: rng.normal(TIME_OPTIMAL_ETA[c], self.sigma_eta_t[c], size=n_subjects)
            for c in blocks
        }
        self.eta_iso = u(-0.5, 1.5, size=n_subjects)
        self.ln_a_gain = _truncnorm_draw(
            rng, self.mu_a_gain, self.sigma_a_gain, -math.inf, 0.0, n_subjects
        )
        self.ln_a_loss = _truncnorm_draw(
            rng, self.mu_a_loss, self.sigma_a_loss, -math.inf, 0.0, n_subjects
        )
        self.ln_lambda = _truncnorm_draw(
            rng, self.mu_lambda, self.sigma_lambda, *self.lam_bounds, n_subjects
        )
        self.du: dict[tuple[int, Dynamic], np.ndarray] = {}
        self.ll: dict[tuple[int, Dynamic], np.ndarray] = {}
        self.refresh_all()

    # branch delta-u under current parameters
    def branch_du(self, m: int, c: Dynamic) -> np.ndarray:
        block = self.blocks[c]
        if m == 0:
            return _iso_delta_u(block, self.eta_t[c])
        if m == 1:
            return _iso_delta_u(block, self.eta_iso)
        return _pt_delta_u(block, self.ln_a_gain, self.ln_a_loss, self.ln_lambda)

    def refresh_branch(self, m: int, c: Dynamic) -> None:
        du = self.branch_du(m, c)
        self.du[(m, c)] = du
        self.ll[(m, c)] = _block_ll(self.blocks[c], du, self.ln_beta[c])

    def refresh_all(self) -> None:
        for m in range(3):
            for c in self.blocks:
                self.refresh_branch(m, c)

    def all_finite(self) -> bool:
        return all(bool(np.all(np.isfinite(v))) for v in self.ll.values())


def _mixture_chain(
    blocks: dict[Dynamic, _ConditionBlock],
    spec: MixtureSpec,
    config: SamplerConfig,
    rng: np.random.Generator,
    n_subjects: int,
    pseudos: _PseudoPriors,
) -> dict:
    for _ in range(MAX_REINITS + 1):
        st = _MixtureState(blocks, spec, rng, n_subjects, pseudos)
        if st.all_finite():
            break
    else:
        raise RuntimeError(
            f"no finite starting point after {MAX_REINITS} re-initializations"
        )

    sc = MixtureScales()
    window = config.target_acceptance
    conditions = sorted(blocks, key=lambda c: c.value)
    tuners: dict[str, _BlockTuner] = {}
    for c in conditions:
        tuners[f"eta_t_{c.value}"] = _BlockTuner(sc.eta_t, window)
        tuners[f"ln_beta_{c.value}"] = _BlockTuner(sc.ln_beta, window)
        tuners[f"sigma_eta_t_{c.value}"] = _BlockTuner(sc.hyper, window)
        tuners[f"mu_beta_{c.value}"] = _BlockTuner(sc.hyper, window)
        tuners[f"sigma_beta_{c.value}"] = _BlockTuner(sc.hyper, window)
    tuners["eta_iso"] = _BlockTuner(sc.eta_iso, window)
    tuners["ln_a_gain"] = _BlockTuner(sc.ln_alpha, window)
    tuners["ln_a_loss"] = _BlockTuner(sc.ln_alpha, window)
    tuners["ln_lambda"] = _BlockTuner(sc.ln_lambda, window)
    for name in ("mu_eta", "sigma_eta", "mu_a_gain", "sigma_a_gain",
                 "mu_a_loss", "sigma_a_loss", "mu_lambda", "sigma_lambda"):
        tuners[name] = _BlockTuner(sc.hyper, window)
    # independence-style jump: the tuner only records its acceptance rate
    tuners["switch"] = _BlockTuner(1.0, window)

    s = n_subjects
    n_keep = config.samples_per_chain
    keep_z = np.empty((n_keep, s), dtype=np.int8)

    total = config.burn_in + n_keep
    for it in range(total):
        warm = it < config.burn_in

        # time-optimal branch, per condition
        for c in conditions:
            name = f"eta_t_{c.value}"
            tuner = tuners[name]
            active = st.z == 0
            prop = st.eta_t[c] + rng.normal(0.0, tuner.scale, size=s)
            du_prop = _iso_delta_u(blocks[c], prop)
            ll_prop = _block_ll(blocks[c], du_prop, st.ln_beta[c])
            mean_c = TIME_OPTIMAL_ETA[c]
            log_ratio = (
                np.where(active, ll_prop - st.ll[(0, c)], 0.0)
                + _log_normal_pdf(prop, mean_c, st.sigma_eta_t[c])
                - _log_normal_pdf(st.eta_t[c], mean_c, st.sigma_eta_t[c])
            )
            accept = np.log(rng.random(s)) < log_ratio
            st.eta_t[c] = np.where(accept, prop, st.eta_t[c])
            tuner.record(float((accept & active).sum()), int(active.sum()))
            inactive = ~active
            if np.any(inactive):
                st.eta_t[c][inactive] = st.q.eta_t_m[c][inactive] + st.q.eta_t_sd[c][
                    inactive
                ] * rng.standard_normal(int(inactive.sum()))
            st.refresh_branch(0, c)

        # isoelastic branch: one eta across conditions
        tuner = tuners["eta_iso"]
        active = st.z == 1
        prop = st.eta_iso + rng.normal(0.0, tuner.scale, size=s)
        ll_prop = {c: _block_ll(blocks[c], _iso_delta_u(blocks[c], prop), st.ln_beta[c]) for c in conditions}
        ll_cur = sum(st.ll[(1, c)] for c in conditions)
        ll_new = sum(ll_prop[c] for c in conditions)
        log_ratio = (
            np.where(active, ll_new - ll_cur, 0.0)
            + _log_normal_pdf(prop, st.mu_eta, st.sigma_eta)
            - _log_normal_pdf(st.eta_iso, st.mu_eta, st.sigma_eta)
        )
        accept = np.log(rng.random(s)) < log_ratio
        st.eta_iso = np.where(accept, prop, st.eta_iso)
        tuner.record(float((accept & active).sum()), int(active.sum()))
        inactive = ~active
        if np.any(inactive):
            st.eta_iso[inactive] = st.q.iso_m[inactive] + st.q.iso_sd[
                inactive
            ] * rng.standard_normal(int(inactive.sum()))
        for c in conditions:
            st.refresh_branch(1, c)

        # prospect-theory branch: three parameter classes
        active = st.z == 2
        pt_specs = [
            ("ln_a_gain", "ln_a_gain", st.mu_a_gain, st.sigma_a_gain, (-math.inf, 0.0)),
            ("ln_a_loss", "ln_a_loss", st.mu_a_loss, st.sigma_a_loss, (-math.inf, 0.0)),
            ("ln_lambda", "ln_lambda", st.mu_lambda, st.sigma_lambda, st.lam_bounds),
        ]
        for name, attr, mu, sigma, bounds in pt_specs:
            tuner = tuners[name]
            cur = getattr(st, attr)
            prop = cur + rng.normal(0.0, tuner.scale, size=s)
            inside = (prop >= bounds[0]) & (prop <= bounds[1])
            trial = np.where(inside, prop, cur)
            st_vals = {"ln_a_gain": st.ln_a_gain, "ln_a_loss": st.ln_a_loss, "ln_lambda": st.ln_lambda}
            st_vals[attr] = trial
            ll_prop = {}
            for c in conditions:
                du_p = _pt_delta_u(blocks[c], st_vals["ln_a_gain"], st_vals["ln_a_loss"], st_vals["ln_lambda"])
                ll_prop[c] = _block_ll(blocks[c], du_p, st.ln_beta[c])
            ll_cur = sum(st.ll[(2, c)] for c in conditions)
            ll_new = sum(ll_prop[c] for c in conditions)
            log_ratio = (
                np.where(active, ll_new - ll_cur, 0.0)
                + _log_normal_pdf(trial, mu, sigma)
                - _log_normal_pdf(cur, mu, sigma)
            )
            accept = inside & (np.log(rng.random(s)) < log_ratio)
            setattr(st, attr, np.where(accept, prop, cur))
            tuner.record(float((accept & active).sum()), int(active.sum()))
            for c in conditions:
                st.refresh_branch(2, c)
        inactive = ~active
        if np.any(inactive):
            n_in = int(inactive.sum())
            st.ln_a_gain[inactive] = _truncnorm_draw(
                rng, st.q.pt_m[inactive, 0], st.q.pt_sd[inactive, 0], -math.inf, 0.0, n_in
            )
            st.ln_a_loss[inactive] = _truncnorm_draw(
                rng, st.q.pt_m[inactive, 1], st.q.pt_sd[inactive, 1], -math.inf, 0.0, n_in
            )
            st.ln_lambda[inactive] = _truncnorm_draw(
                rng, st.q.pt_m[inactive, 2], st.q.pt_sd[inactive, 2], *st.lam_bounds, n_in
            )
            for c in conditions:
                st.refresh_branch(2, c)

        # shared sensitivity, per condition, likelihood from the active branch
        for c in conditions:
            name = f"ln_beta_{c.value}"
            tuner = tuners[name]
            prop = st.ln_beta[c] + rng.normal(0.0, tuner.scale, size=s)
            ll_prop_by_m = [
                _block_ll(blocks[c], st.du[(m, c)], prop) for m in range(3)
            ]
            ll_cur_active = np.choose(st.z, [st.ll[(m, c)] for m in range(3)])
            ll_prop_active = np.choose(st.z, ll_prop_by_m)
            log_ratio = (
                ll_prop_active
                - ll_cur_active
                + _log_normal_pdf(prop, st.mu_beta[c], st.sigma_beta[c])
                - _log_normal_pdf(st.ln_beta[c], st.mu_beta[c], st.sigma_beta[c])
            )
            accept = np.log(rng.random(s)) < log_ratio
            st.ln_beta[c] = np.where(accept, prop, st.ln_beta[c])
            tuner.record(float(accept.sum()), s)
            for m in range(3):
                st.ll[(m, c)] = _block_ll(blocks[c], st.du[(m, c)], st.ln_beta[c])

        # hyperparameters: scalar RW-MH confined to uniform supports
        def scalar_hyper(name, current, logp, support, open_low=False):
            tuner = tuners[name]
            prop = current + rng.normal(0.0, tuner.scale)
            ok = _in_support(prop, support, open_low)
            if ok:
                ok = math.log(rng.random()) < (logp(prop) - logp(current))
            tuner.record(1.0 if ok else 0.0, 1)
            return prop if ok else current

        # hierarchies describe the subjects currently assigned to the branch;
        # unassigned subjects' branch values are pseudo-prior refreshes and
        # would otherwise drag the group parameters toward the refresh fits
        act_to = st.z == 0
        act_iso = st.z == 1
        act_pt = st.z == 2
        n_pt = int(act_pt.sum())

        for c in conditions:
            st.sigma_eta_t[c] = scalar_hyper(
                f"sigma_eta_t_{c.value}",
                st.sigma_eta_t[c],
                lambda v, c=c, a=act_to: float(
                    np.sum(_log_normal_pdf(st.eta_t[c][a], TIME_OPTIMAL_ETA[c], v))
                ),
                SIGMA_ETA_T_SUPPORT,
            )
            st.mu_beta[c] = scalar_hyper(
                f"mu_beta_{c.value}",
                st.mu_beta[c],
                lambda v, c=c: float(np.sum(_log_normal_pdf(st.ln_beta[c], v, st.sigma_beta[c]))),
                MU_BETA_SUPPORT,
            )
            st.sigma_beta[c] = scalar_hyper(
                f"sigma_beta_{c.value}",
                st.sigma_beta[c],
                lambda v, c=c: float(np.sum(_log_normal_pdf(st.ln_beta[c], st.mu_beta[c], v))),
                SIGMA_BETA_SUPPORT,
            )
        st.mu_eta = scalar_hyper(
            "mu_eta",
            st.mu_eta,
            lambda v, a=act_iso: float(
                np.sum(_log_normal_pdf(st.eta_iso[a], v, st.sigma_eta))
            ),
            MU_ETA_SUPPORT,
        )
        st.sigma_eta = scalar_hyper(
            "sigma_eta",
            st.sigma_eta,
            lambda v, a=act_iso: float(
                np.sum(_log_normal_pdf(st.eta_iso[a], st.mu_eta, v))
            ),
            SIGMA_ETA_SUPPORT,
            open_low=True,
        )
        st.mu_a_gain = scalar_hyper(
            "mu_a_gain",
            st.mu_a_gain,
            lambda v, a=act_pt, n=n_pt: float(
                np.sum(_log_normal_pdf(st.ln_a_gain[a], v, st.sigma_a_gain))
                - n * _ln_trunc_z(v, st.sigma_a_gain, -math.inf, 0.0)
            ),
            MU_ALPHA_SUPPORT,
        )
        st.sigma_a_gain = scalar_hyper(
            "sigma_a_gain",
            st.sigma_a_gain,
            lambda v, a=act_pt, n=n_pt: float(
                np.sum(_log_normal_pdf(st.ln_a_gain[a], st.mu_a_gain, v))
                - n * _ln_trunc_z(st.mu_a_gain, v, -math.inf, 0.0)
            ),
            SIGMA_ALPHA_SUPPORT,
            open_low=True,
        )
        st.mu_a_loss = scalar_hyper(
            "mu_a_loss",
            st.mu_a_loss,
            lambda v, a=act_pt, n=n_pt: float(
                np.sum(_log_normal_pdf(st.ln_a_loss[a], v, st.sigma_a_loss))
                - n * _ln_trunc_z(v, st.sigma_a_loss, -math.inf, 0.0)
            ),
            MU_ALPHA_SUPPORT,
        )
        st.sigma_a_loss = scalar_hyper(
            "sigma_a_loss",
            st.sigma_a_loss,
            lambda v, a=act_pt, n=n_pt: float(
                np.sum(_log_normal_pdf(st.ln_a_loss[a], st.mu_a_loss, v))
                - n * _ln_trunc_z(st.mu_a_loss, v, -math.inf, 0.0)
            ),
            SIGMA_ALPHA_SUPPORT,
            open_low=True,
        )
        st.mu_lambda = scalar_hyper(
            "mu_lambda",
            st.mu_lambda,
            lambda v, a=act_pt, n=n_pt: float(
                np.sum(_log_normal_pdf(st.ln_lambda[a], v, st.sigma_lambda))
                - n * _ln_trunc_z(v, st.sigma_lambda, *st.lam_bounds)
            ),
            MU_LAMBDA_SUPPORT,
        )
        st.sigma_lambda = scalar_hyper(
            "sigma_lambda",
            st.sigma_lambda,
            lambda v, a=act_pt, n=n_pt: float(
                np.sum(_log_normal_pdf(st.ln_lambda[a], st.mu_lambda, v))
                - n * _ln_trunc_z(st.mu_lambda, v, *st.lam_bounds)
            ),
            SIGMA_LAMBDA_SUPPORT,
            open_low=True,
        )

        assert _in_support(st.mu_eta, MU_ETA_SUPPORT)
        assert _in_support(st.sigma_eta, SIGMA_ETA_SUPPORT, open_low=True)
        assert _in_support(st.mu_a_gain, MU_ALPHA_SUPPORT)
        assert _in_support(st.mu_lambda, MU_LAMBDA_SUPPORT)
        for c in conditions:
            assert _in_support(st.mu_beta[c], MU_BETA_SUPPORT)
            assert _in_support(st.sigma_beta[c], SIGMA_BETA_SUPPORT)
            assert _in_support(st.sigma_eta_t[c], SIGMA_ETA_T_SUPPORT)

        # group-prior minus refresh-density corrections per branch: these
        # keep the indicator draw exact under informed refreshes and let
        # the weights carry each branch's Occam factor
        lp = np.zeros((s, 3))
        for c in conditions:
            lp[:, 0] += _log_normal_pdf(
                st.eta_t[c], TIME_OPTIMAL_ETA[c], st.sigma_eta_t[c]
            ) - _log_normal_pdf_arr(st.eta_t[c], st.q.eta_t_m[c], st.q.eta_t_sd[c])
        lp[:, 1] = _log_normal_pdf(
            st.eta_iso, st.mu_eta, st.sigma_eta
        ) - _log_normal_pdf_arr(st.eta_iso, st.q.iso_m, st.q.iso_sd)
        lp[:, 2] = (
            _log_normal_pdf(st.ln_a_gain, st.mu_a_gain, st.sigma_a_gain)
            - _ln_trunc_z(st.mu_a_gain, st.sigma_a_gain, -math.inf, 0.0)
            - _log_normal_pdf_arr(st.ln_a_gain, st.q.pt_m[:, 0], st.q.pt_sd[:, 0])
            + _ln_trunc_z_arr(st.q.pt_m[:, 0], st.q.pt_sd[:, 0], -math.inf, 0.0)
            + _log_normal_pdf(st.ln_a_loss, st.mu_a_loss, st.sigma_a_loss)
            - _ln_trunc_z(st.mu_a_loss, st.sigma_a_loss, -math.inf, 0.0)
            - _log_normal_pdf_arr(st.ln_a_loss, st.q.pt_m[:, 1], st.q.pt_sd[:, 1])
            + _ln_trunc_z_arr(st.q.pt_m[:, 1], st.q.pt_sd[:, 1], -math.inf, 0.0)
            + _log_normal_pdf(st.ln_lambda, st.mu_lambda, st.sigma_lambda)
            - _ln_trunc_z(st.mu_lambda, st.sigma_lambda, *st.lam_bounds)
            - _log_normal_pdf_arr(st.ln_lambda, st.q.pt_m[:, 2], st.q.pt_sd[:, 2])
            + _ln_trunc_z_arr(st.q.pt_m[:, 2], st.q.pt_sd[:, 2], *st.lam_bounds)
        )

        # indicator Gibbs step from current branch likelihoods
        g = (
            np.stack(
                [sum(st.ll[(m, c)] for c in conditions) for m in range(3)], axis=1
            )
            + lp
        )
        g = g - np.max(g, axis=1, keepdims=True)
        w = np.exp(g)
        w = w / np.sum(w, axis=1, keepdims=True)
        u = rng.random(s)[:, None]
        st.z = np.sum(u > np.cumsum(w, axis=1), axis=1).astype(np.intp)

        # Metropolized cross-family jump proposing the indicator together
        # with branch-matched sensitivities: the shared sensitivity fitted
        # to the active branch can sit orders of magnitude off the scale a
        # rival branch's utilities require, so indicator moves that keep it
        # fixed cannot cross between families
        m_cur = st.z
        m_prop = (m_cur + 1 + (rng.random(s) < 0.5)) % 3
        rows_idx = np.arange(s)
        ll_cur = np.zeros(s)
        ll_prop = np.zeros(s)
        log_q = np.zeros(s)
        log_prior_b = np.zeros(s)
        lnb_prop = {}
        for c in conditions:
            qm_p = st.q.ln_beta_m[c][rows_idx, m_prop]
            qs_p = st.q.ln_beta_sd[c][rows_idx, m_prop]
            qm_c = st.q.ln_beta_m[c][rows_idx, m_cur]
            qs_c = st.q.ln_beta_sd[c][rows_idx, m_cur]
            b_p = qm_p + qs_p * rng.standard_normal(s)
            lnb_prop[c] = b_p
            block = blocks[c]
            du_stack = np.stack([st.du[(m, c)] for m in range(3)])
            du_rows = du_stack[
                m_prop[block.subject_index], np.arange(block.y.size)
            ]
            ll_prop += _block_ll(block, du_rows, b_p)
            ll_cur += np.choose(m_cur, [st.ll[(m, c)] for m in range(3)])
            log_q += _log_normal_pdf(st.ln_beta[c], qm_c, qs_c) - _log_normal_pdf(
                b_p, qm_p, qs_p
            )
            log_prior_b += _log_normal_pdf(
                b_p, st.mu_beta[c], st.sigma_beta[c]
            ) - _log_normal_pdf(st.ln_beta[c], st.mu_beta[c], st.sigma_beta[c])
        jump_ratio = (
            ll_prop
            - ll_cur
            + lp[rows_idx, m_prop]
            - lp[rows_idx, m_cur]
            + log_prior_b
            + log_q
        )
        acc = np.log(rng.random(s)) < jump_ratio
        tuners["switch"].record(float(acc.sum()), s)
        if np.any(acc):
            st.z = np.where(acc, m_prop, m_cur)
            for c in conditions:
                st.ln_beta[c] = np.where(acc, lnb_prop[c], st.ln_beta[c])
                for m in range(3):
                    st.ll[(m, c)] = _block_ll(
                        blocks[c], st.du[(m, c)], st.ln_beta[c]
                    )

        if warm:
            if (it + 1) % config.adapt_interval == 0:
                for tuner in tuners.values():
                    tuner.adapt()
        else:
            keep_z[it - config.burn_in] = st.z

    return {
        "z": keep_z,
        "acceptance": {k: t.overall_rate() for k, t in tuners.items()},
    }


def run_latent_mixture(
    datasets: Iterable[SubjectDataset],
    config: Optional[SamplerConfig] = None,
    spec: MixtureSpec = MixtureSpec(),
) -> MixtureResult:
    """Sample the latent-mixture model; every subject needs both conditions."""
    if config is None:
        config = selection_config()
    grouped: dict[str, dict[Dynamic, SubjectDataset]] = {}
    order: list[str] = []
    for ds in datasets:
        if ds.subject not in grouped:
            grouped[ds.subject] = {}
            order.append(ds.subject)
        if ds.condition in grouped[ds.subject]:
            raise ValueError(f"subject {ds.subject} appears twice for {ds.condition.value}")
        grouped[ds.subject][ds.condition] = ds
    for name in order:
        missing = set(Dynamic) - set(grouped[name])
        if missing:
            raise ValueError(
                f"subject {name} lacks condition {sorted(c.value for c in missing)}"
            )
    blocks = {
        c: _build_block(c, [grouped[name][c] for name in order]) for c in Dynamic
    }

    pseudos = _fit_pseudopriors(blocks, spec)
    chain_seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    results = [
        _mixture_chain(
            blocks, spec, config, np.random.default_rng(seed), len(order), pseudos
        )
        for seed in chain_seeds
    ]
    z_draws = np.stack([r["z"] for r in results])
    counts = np.stack(
        [(z_draws == m).sum(axis=(0, 1)) for m in range(3)], axis=1
    ).astype(float)
    probs = counts / counts.sum(axis=1, keepdims=True)
    acceptance = {
        k: np.array([r["acceptance"][k] for r in results])
        for k in results[0]["acceptance"]
    }
    return MixtureResult(
        subjects=tuple(order),
        model_names=MODEL_NAMES,
        subject_probs=probs,
        z_draws=z_draws,
        acceptance=acceptance,
        config=config,
    )


def _check_simplex(rows: np.ndarray, what: str) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[None, :]
    if rows.shape[1] != 3:
        raise ValueError(f"{what} must have three columns, got shape {rows.shape}")
    if np.any(rows < -1e-9) or np.any(np.abs(rows.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError(f"{what} rows must lie on the probability simplex")
    return rows


def _count_weights(p: np.ndarray, skip: Optional[int] = None) -> np.ndarray:
    """Assignment mass aggregated by model counts.

    f[n1, n2] sums prod_i p[i, a_i] over assignments of the included
    subjects with n1 in model 0 and n2 in model 1 (the rest in model 2).
    """
    n = p.shape[0]
    f = np.zeros((n + 1, n + 1))
    f[0, 0] = 1.0
    for i in range(n):
        if i == skip:
            continue
        g = f * p[i, 2]
        g[1:, :] += f[:-1, :] * p[i, 0]
        g[:, 1:] += f[:, :-1] * p[i, 1]
        f = g
    return f


def _ln_count_factor(n_total: int) -> np.ndarray:
    """ln of B(1 + counts)/B(1, 1, 1) on the (n1, n2) grid for n_total subjects."""
    idx = np.arange(n_total + 1)
    n1 = idx[:, None]
    n2 = idx[None, :]
    n3 = n_total - n1 - n2
    valid = n3 >= 0
    ln_fac = gammaln(n1 + 1.0) + gammaln(n2 + 1.0) + gammaln(np.where(valid, n3, 0) + 1.0)
    out = ln_fac + gammaln(3.0) - gammaln(n_total + 3.0)
    out[~valid] = -np.inf
    return out


def _dirichlet_fit(subject_probs: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Exact fit of the Dirichlet random-effects model.

    The random-effects update alpha = alpha0 + sum of responsibilities is
    evaluated with exact posterior responsibilities, computed by a
    dynamic program over assignment counts (tractable with three models).
    Returns (alpha, responsibilities, log evidence). With a uniform
    Dirichlet prior, alpha / sum(alpha) is the exact posterior mean of
    the model frequencies. Subject evidence proxies are the posterior
    model probabilities.
    """
    p = _check_simplex(subject_probs, "subject probabilities")
    n = p.shape[0]
    ln_factor = _ln_count_factor(n)
    with np.errstate(invalid="ignore"):
        factor = np.exp(ln_factor)
    factor[~np.isfinite(factor)] = 0.0

    z_total = float(np.sum(_count_weights(p) * factor))
    if z_total <= 0.0:
        raise ValueError("subject probabilities carry no joint mass")

    resp = np.empty((n, 3))
    for i in range(n):
        f_wo = _count_weights(p, skip=i)
        # adding subject i to model k shifts its count by one
        mass = np.empty(3)
        mass[0] = float(np.sum(f_wo[:-1, :] * factor[1:, :])) * p[i, 0]
        mass[1] = float(np.sum(f_wo[:, :-1] * factor[:, 1:])) * p[i, 1]
        mass[2] = float(np.sum(f_wo * factor)) * p[i, 2]
        total = mass.sum()
        resp[i] = mass / total if total > 0 else np.full(3, 1.0 / 3.0)

    alpha = np.maximum(1.0 + resp.sum(axis=0), 1e-6)
    return alpha, resp, math.log(z_total)


def estimated_frequencies(subject_probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and sd of the model frequencies in the cohort."""
    alpha, _, _ = _dirichlet_fit(subject_probs)
    total = float(alpha.sum())
    mean = alpha / total
    var = alpha * (total - alpha) / (total**2 * (total + 1.0))
    return mean, np.sqrt(var)


def _null_free_energy(subject_probs: np.ndarray) -> float:
    p = _check_simplex(subject_probs, "subject probabilities")
    return float(np.sum(np.log(np.maximum(p.mean(axis=1), 1e-300))))


def bayesian_omnibus_risk(subject_probs: np.ndarray) -> float:
    """Posterior probability that model frequencies are exactly uniform."""
    _, _, f1 = _dirichlet_fit(subject_probs)
    f0 = _null_free_energy(subject_probs)
    return float(expit(f0 - f1))


def protected_exceedance(
    subject_probs: np.ndarray,
    n_draws: int = 100_000,
    seed: int = 0,
    force_bor: Optional[float] = None,
) -> np.ndarray:
    """PXP: exceedance probabilities shrunk toward uniform by the BOR.

    force_bor substitutes the omnibus risk (tests of the two limits);
    by default it is computed from the data.
    """
    alpha, _, _ = _dirichlet_fit(subject_probs)
    rng = np.random.default_rng(seed)
    draws = rng.dirichlet(alpha, size=n_draws)
    winners = np.argmax(draws, axis=1)
    phi = np.bincount(winners, minlength=3) / n_draws
    bor = bayesian_omnibus_risk(subject_probs) if force_bor is None else float(force_bor)
    if not 0.0 <= bor <= 1.0:
        raise ValueError(f"BOR must be a probability, got {bor}")
    return phi * (1.0 - bor) + bor / 3.0


@dataclass(frozen=True)
class ModelComparison:
    """Group-level comparison summary."""

    subject_probs: np.ndarray
    frequencies: np.ndarray
    frequency_sd: np.ndarray
    exceedance: np.ndarray
    bor: float
    pxp: np.ndarray

    def __post_init__(self):
        _check_simplex(self.subject_probs, "subject probabilities")
        for name in ("pxp",):
            vec = getattr(self, name)
            if abs(float(np.sum(vec)) - 1.0) > 1e-6:
                raise ValueError(f"{name} must sum to 1, got {np.sum(vec)}")


def compare_models(
    subject_probs: np.ndarray, n_draws: int = 100_000, seed: int = 0
) -> ModelComparison:
    """Frequencies, exceedance, BOR, and PXP in one pass."""
    probs = _check_simplex(subject_probs, "subject probabilities")
    alpha, _, _ = _dirichlet_fit(probs)
    rng = np.random.default_rng(seed)
    draws = rng.dirichlet(alpha, size=n_draws)
    phi = np.bincount(np.argmax(draws, axis=1), minlength=3) / n_draws
    bor = bayesian_omnibus_risk(probs)
    mean, sd = estimated_frequencies(probs)
    return ModelComparison(
        subject_probs=probs,
        frequencies=mean,
        frequency_sd=sd,
        exceedance=phi,
        bor=bor,
        pxp=phi * (1.0 - bor) + bor / 3.0,
    )


def heatmap_rows(result: MixtureResult) -> list[dict[str, object]]:
    """Per-subject probability table for CSV export."""
    rows = []
    for i, subject in enumerate(result.subjects):
        row: dict[str, object] = {"subject": subject}
        for k, model in enumerate(result.model_names):
            row[model] = float(result.subject_probs[i, k])
        rows.append(row)
    return rows
