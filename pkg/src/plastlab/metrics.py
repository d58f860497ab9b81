"""Plasticity diagnostics: dormancy, active units, spectral ranks, drift.

All operations are pure functions over forward traces, parameter states, and
gradients. Rank metrics normalize the singular spectrum, so they are
invariant to positive rescaling of the feature matrix; the effective rank
accumulates its entropy in extended precision so that uniform spectra land
on exact integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericError, UndefinedRankError
from .net import ForwardTrace, Gradients, NetworkState, forward
from .numkit import ensure_matrix, svd_values

DEFAULT_TAU = 0.025
_SR_THRESHOLD = 0.99


@dataclass
class MetricReport:
    """One scope's diagnostics at one step; None marks unavailable inputs."""

    step: int
    scope: str
    rdu: float
    fau: float
    stable_rank: int | None
    effective_rank: float | None
    weight_diff: float | None
    weight_diff_per_param: float | None
    grad_norm: float | None

    def __post_init__(self) -> None:
        if not 0.0 <= self.rdu <= 1.0:
            raise InvalidInputError(f"rdu out of range: {self.rdu}")
        if not 0.0 <= self.fau <= 1.0:
            raise InvalidInputError(f"fau out of range: {self.fau}")
        for name in ("weight_diff", "weight_diff_per_param", "grad_norm"):
            value = getattr(self, name)
            if value is not None and value < 0.0:
                raise InvalidInputError(f"{name} must be >= 0, got {value}")

    def rows(self) -> list[tuple[str, float]]:
        """Present metrics as (name, value) pairs, for structured logging."""
        pairs = []
        for name in (
            "rdu",
            "fau",
            "stable_rank",
            "effective_rank",
            "weight_diff",
            "weight_diff_per_param",
            "grad_norm",
        ):
            value = getattr(self, name)
            if value is not None:
                pairs.append((name, float(value)))
        return pairs


def _layer_scores(post: np.ndarray) -> np.ndarray:
    """Normalized mean-absolute-activation score per neuron of one layer."""
    mean_abs = np.abs(post).mean(axis=0)
    denom = mean_abs.mean()
    if denom == 0.0:
        return np.zeros(post.shape[1])
    return mean_abs / denom


def dormant_ratio(trace: ForwardTrace, tau: float = DEFAULT_TAU) -> dict[str, float]:
    """Fraction of neurons whose normalized activation score is <= tau.

    Scores are computed per layer on post-activations. A layer whose mean
    absolute activation is exactly zero counts as fully dormant. Returns one
    entry per layer plus "all".
    """
    if tau < 0.0:
        raise InvalidInputError(f"tau must be >= 0, got {tau}")
    if not trace.postacts or trace.postacts[0].shape[0] < 1:
        raise InvalidInputError("trace has no samples")
    out: dict[str, float] = {}
    dormant = total = 0
    for i, post in enumerate(trace.postacts):
        scores = _layer_scores(post)
        d = int(np.count_nonzero(scores <= tau))
        out[f"layer{i}"] = d / post.shape[1]
        dormant += d
        total += post.shape[1]
    out["all"] = dormant / total
    return out


def active_fraction(trace: ForwardTrace) -> dict[str, float]:
    """Fraction of strictly positive post-activations, per layer plus "all".

    The indicator is applied verbatim even for tanh/fourier layers, where
    "active" degenerates to "positive-valued".
    """
    if not trace.postacts or trace.postacts[0].shape[0] < 1:
        raise InvalidInputError("trace has no samples")
    out: dict[str, float] = {}
    active = total = 0
    for i, post in enumerate(trace.postacts):
        a = int(np.count_nonzero(post > 0.0))
        out[f"layer{i}"] = a / post.size
        active += a
        total += post.size
    out["all"] = active / total
    return out


def stable_rank(f: np.ndarray) -> int:
    """Smallest k whose leading singular values capture >99% of the spectrum sum."""
    sv = svd_values(ensure_matrix(f, "f"))
    total = float(sv.sum())
    if total == 0.0:
        raise UndefinedRankError("stable rank of an all-zero matrix is undefined")
    fractions = np.cumsum(sv) / total
    return int(np.argmax(fractions > _SR_THRESHOLD)) + 1


def effective_rank(f: np.ndarray) -> float:
    """exp of the Shannon entropy of the L1-normalized singular spectrum.

    Zero singular values contribute nothing. The entropy sum runs in
    extended precision so uniform spectra give back exact integers.
    """
    sv = svd_values(ensure_matrix(f, "f"))
    if float(sv.sum()) == 0.0:
        raise UndefinedRankError("effective rank of an all-zero matrix is undefined")
    p = sv.astype(np.longdouble)
    p = p / p.sum()
    nz = p[p > 0.0]
    entropy = -(nz * np.log(nz)).sum()
    return float(np.exp(entropy))


def weight_difference(a: NetworkState, b: NetworkState) -> tuple[float, float]:
    """L2 norm of the concatenated parameter difference, raw and per-parameter."""
    if a.layers != b.layers or a.param_order != b.param_order:
        raise InvalidInputError("weight difference requires identical architectures")
    total = 0.0
    count = 0
    for name in a.param_order:
        d = a.params[name] - b.params[name]
        total += float(np.sum(d * d))
        count += d.size
    l2 = float(np.sqrt(total))
    return l2, l2 / count


def _params_l2(
    params: dict[str, np.ndarray], reference: dict[str, np.ndarray], names: list[str]
) -> tuple[float, float]:
    total = 0.0
    count = 0
    for name in names:
        d = params[name] - reference[name]
        total += float(np.sum(d * d))
        count += d.size
    l2 = float(np.sqrt(total))
    return l2, l2 / count if count else 0.0


def gradient_norm(grads: Gradients | dict[str, np.ndarray]) -> float:
    """sqrt of the summed squared L2 norms over all gradient entries."""
    by_name = grads.by_name if isinstance(grads, Gradients) else grads
    total = 0.0
    for name, g in by_name.items():
        if not np.all(np.isfinite(g)):
            err = NumericError(f"non-finite gradient in {name}")
            err.layer = name
            raise err
        total += float(np.sum(g * g))
    return float(np.sqrt(total))


def collect_metrics(
    net: NetworkState,
    probe: np.ndarray,
    grads: Gradients | None = None,
    baseline: NetworkState | None = None,
    tau: float = DEFAULT_TAU,
    step: int = 0,
) -> list[MetricReport]:
    """Full diagnostic sweep: one report per layer, then an "all" aggregate.

    Rank metrics in per-layer reports use that layer's post-activations; the
    aggregate uses the penultimate layer (the representation feeding the
    head). Weight drift is measured against `baseline` when given, otherwise
    against the init snapshot.
    """
    trace = forward(net, probe)
    rdu = dormant_ratio(trace, tau)
    fau = active_fraction(trace)
    ref = baseline.params if baseline is not None else net.init_snapshot
    if baseline is not None and baseline.param_order != net.param_order:
        raise InvalidInputError("baseline architecture does not match network")

    reports = []
    n_layers = len(net.layers)
    for i in range(n_layers):
        scope = f"layer{i}"
        names = [n for n in net.param_order if n.startswith(scope + ".")]
        wd, wd_pp = _params_l2(net.params, ref, names)
        gn = None
        if grads is not None:
            gn = gradient_norm({n: g for n, g in grads.by_name.items() if n.startswith(scope + ".")})
        post = trace.postacts[i]
        try:
            sr, er = stable_rank(post), effective_rank(post)
        except UndefinedRankError:
            sr, er = None, None
        reports.append(
            MetricReport(step, scope, rdu[scope], fau[scope], sr, er, wd, wd_pp, gn)
        )
    feature_layer = max(n_layers - 2, 0)
    features = trace.postacts[feature_layer]
    try:
        sr_all, er_all = stable_rank(features), effective_rank(features)
    except UndefinedRankError:
        sr_all, er_all = None, None
    wd_all, wd_pp_all = _params_l2(net.params, ref, list(net.param_order))
    gn_all = gradient_norm(grads) if grads is not None else None
    reports.append(
        MetricReport(step, "all", rdu["all"], fau["all"], sr_all, er_all, wd_all, wd_pp_all, gn_all)
    )
    return reports
