"""Central finite-difference verification of analytic gradients.

The check clones the graph to float64 before comparing, so float32 rounding in
the forward pass cannot swamp the difference quotient; what is verified is the
backward-pass math itself, on the same parameter values the float32 model holds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class CoordinateRecord:
    param_name: str
    flat_index: int
    analytic: float
    numeric: float
    relative_error: float


@dataclass
class FiniteDifferenceReport:
    max_relative_error: float
    coordinates: list[CoordinateRecord] = field(default_factory=list)
    num_coordinates: int = 0
    skipped_frozen: int = 0
    resampled_nonsmooth: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def worst(self) -> CoordinateRecord | None:
        if not self.coordinates:
            return None
        return max(self.coordinates, key=lambda r: r.relative_error)


def finite_difference_check(
    graph,
    loss_fn,
    x: np.ndarray,
    epsilon: float = 1e-3,
    coords_per_param: int = 8,
    seed: int = 0,
) -> FiniteDifferenceReport:
    """Compare backward-pass gradients against central differences.

    ``loss_fn`` maps the graph's forward output to ``(loss, dlogits)``.
    For each non-frozen parameter tensor, up to ``coords_per_param`` distinct
    coordinates are sampled with a seeded PRNG and perturbed by ``±epsilon``.
    The relative error is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    A non-finite loss is reported in ``failures`` with the coordinate identity
    and forces ``max_relative_error`` to inf.

    A central difference only estimates the backward pass's gradient where the
    loss is smooth across the whole perturbation interval; a ReLU gate flipping
    inside it makes the quotient measure an unrelated average slope. Graphs
    that expose ``forward_linearized(x, ctx)`` are therefore differenced with
    their gates frozen to the unperturbed operating point — that evaluation is
    the exact function the backward pass differentiates, so the comparison is
    kink-free while a wrong backward still fails (the frozen-gate forward is
    built from forward ops only). For graphs without the hook, each coordinate
    is additionally differenced at ``epsilon/2``; when the two quotients
    disagree the neighborhood is non-smooth and the coordinate is passed over
    and counted in ``resampled_nonsmooth``.
    """
    if not (1e-4 <= epsilon <= 1e-2):
        raise ValueError(f"epsilon must lie in [1e-4, 1e-2], got {epsilon}")
    g64 = graph.clone(dtype=np.float64)
    x64 = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)

    ctx: dict = {}
    out = g64.forward(x64, ctx)
    _, dlogits = loss_fn(out)
    g64.zero_grad()
    g64.backward(np.asarray(dlogits, dtype=np.float64), ctx)

    linearized = getattr(g64, "forward_linearized", None)
    if linearized is not None:
        evaluate = lambda: loss_fn(linearized(x64, ctx))  # noqa: E731
    else:
        evaluate = lambda: loss_fn(g64.forward(x64))  # noqa: E731

    report = FiniteDifferenceReport(max_relative_error=0.0)
    for name, param in g64.parameters().items():
        if param.frozen:
            report.skipped_frozen += 1
            continue
        size = param.value.size
        n_coords = min(coords_per_param, size)
        flat_value = param.value.reshape(-1)
        flat_grad = param.grad.reshape(-1)
        taken = 0
        attempts = 0
        for idx in rng.permutation(size):
            if taken >= n_coords or attempts >= max(4 * n_coords, n_coords + 8):
                break
            attempts += 1
            idx = int(idx)
            original = flat_value[idx]
            losses = []
            for delta in (epsilon, -epsilon, epsilon / 2, -epsilon / 2):
                flat_value[idx] = original + delta
                loss, _ = evaluate()
                losses.append(float(loss))
            flat_value[idx] = original
            if not all(np.isfinite(losses)):
                report.failures.append(f"{name}[{idx}]: non-finite loss {losses}")
                report.max_relative_error = float("inf")
                continue
            numeric = (losses[0] - losses[1]) / (2 * epsilon)
            numeric_half = (losses[2] - losses[3]) / epsilon
            consistency = abs(numeric - numeric_half)
            if consistency > 1e-3 * max(abs(numeric), abs(numeric_half), 1e-8):
                report.resampled_nonsmooth += 1
                continue
            analytic = float(flat_grad[idx])
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
            report.coordinates.append(
                CoordinateRecord(name, idx, analytic, numeric, rel)
            )
            report.num_coordinates += 1
            taken += 1
            report.max_relative_error = max(report.max_relative_error, rel)
    return report
