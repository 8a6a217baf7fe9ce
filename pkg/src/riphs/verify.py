"""Sampling probes of the exergy growth conditions used for existence.

Both probes are numerical surrogates: a supremum estimated over finitely
many samples and monotonicity checked along finitely many rays.  They can
refute a growth condition, never prove it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import ModelSpec, exergy, exergy_grad
from .errors import DomainViolation, InvalidParams

__all__ = ["GrowthEstimate", "estimate_growth_constant", "radial_probe", "verify_report", "write_verify_json"]

MAX_RESAMPLES = 100
X2_FLOOR = 1e-3  # smallest gas-piston volume drawn by the samplers
DIRECTION_FLOOR = 0.05
PROBE_RADII = (1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0)


@dataclass(frozen=True)
class GrowthEstimate:
    c_hat: float
    shift: float
    p: float
    sample_count: int
    max_ratio_location: np.ndarray
    stable: bool
    tier_max: tuple = field(default=(), repr=False)


def _tier_rng(seed, r):
    # one stream per radius so nested radius sets share their samples
    return np.random.default_rng([int(seed), int(np.float64(r).view(np.uint64))])


def _unit(rng, shape):
    v = rng.standard_normal(shape)
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    while np.any(norm == 0):
        v = np.where(norm == 0, rng.standard_normal(shape), v)
        norm = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / norm


def _is_gas_piston(model):
    return model.info.get("kind") == "gas_piston"


def _sample_shell(model, r, count, rng):
    """``count`` points on the sphere of radius ``r`` that pass the domain guard."""
    X = r * _unit(rng, (count, model.n))
    if _is_gas_piston(model):
        X[:, 1] = np.exp(rng.uniform(np.log(X2_FLOOR), np.log(max(r, X2_FLOOR)), count))
    if model.domain_guard is None:
        return X
    for _ in range(MAX_RESAMPLES):
        bad = ~np.asarray(model.domain_guard(X), dtype=bool)
        if not bad.any():
            return X
        X[bad] = r * _unit(rng, (int(bad.sum()), model.n))
    raise DomainViolation(f"could not draw admissible samples at radius {r}")


def _input_matrix(model, X):
    g = np.asarray(model.input_map(X, model.hamiltonian_grad(X)), dtype=float)
    return np.broadcast_to(g, X.shape[:-1] + (model.n, model.m))


def estimate_growth_constant(model: ModelSpec, p: float = 1.0, radii=(1, 2, 5, 10, 20),
                             samples_per_radius: int = 200, seed: int = 0) -> GrowthEstimate:
    """Sampled supremum of ``|g^T E_x|_1^p / (E + D)``.

    The 1-norm is dual to the max-norm of the control, which is the norm
    used by the Gronwall bound in :func:`riphs.ivp.balance_report`.  The
    shift is ``D = max(0, -min E) + 1`` over all samples.  ``stable`` means
    the per-radius maxima of the three largest radii agree within 20%.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise InvalidParams("radii must be positive and strictly increasing")
    if p < 1:
        raise InvalidParams("p must be at least 1")
    if samples_per_radius < 1:
        raise InvalidParams("samples_per_radius must be positive")

    tiers = [_sample_shell(model, r, samples_per_radius, _tier_rng(seed, r)) for r in radii]
    X = np.concatenate(tiers)
    E = exergy(model, X)
    shift = max(0.0, -float(E.min())) + 1.0
    gE = np.einsum("...ij,...i->...j", _input_matrix(model, X), exergy_grad(model, X))
    ratio = np.sum(np.abs(gE), axis=-1) ** p / (E + shift)

    per_tier = ratio.reshape(len(radii), samples_per_radius).max(axis=1)
    top = per_tier[-3:]
    if len(radii) < 3:
        stable = False
    elif top.max() == 0:
        stable = True
    else:
        stable = bool((top.max() - top.min()) <= 0.2 * top.max())
    i = int(np.argmax(ratio))
    return GrowthEstimate(float(ratio[i]), shift, float(p), int(X.shape[0]), X[i].copy(), stable,
                          tuple(float(v) for v in per_tier))


def _probe_directions(model, count, rng):
    D = _unit(rng, (count, model.n))
    if not _is_gas_piston(model):
        return D
    for _ in range(MAX_RESAMPLES):
        bad = D[:, 1] < DIRECTION_FLOOR
        if not bad.any():
            return D
        D[bad] = _unit(rng, (int(bad.sum()), model.n))
    raise DomainViolation("could not draw admissible directions")



def radial_probe(model: ModelSpec, directions: int = 32, radii=PROBE_RADII, seed: int = 0) -> dict:
    """Check growth of ``E(r d)`` along random rays.

    A ray passes when ``E`` strictly increases over the upper half of the
    radius schedule and ``E(r_max) >= 10 E(r_min)``.  Failures are reported,
    not raised.  The schedule has to reach far enough for the linear
    ``-T0 x`` growth to beat the constant part of ``E`` on rays where the
    exponential terms decay, hence the default of 100.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size < 2 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise InvalidParams("radii must be positive, strictly increasing, at least two")
    rng = np.random.default_rng(seed)
    D = _probe_directions(model, int(directions), rng)
    failures = []
    upper = radii.size // 2
    for d in D:
        pts = radii[:, None] * d
        try:
            E = exergy(model, pts)
        except (DomainViolation, ArithmeticError) as exc:
            failures.append({"direction": d.tolist(), "reason": f"evaluation failed: {exc}"})
            continue
        tail = E[upper:] if radii.size - upper >= 2 else E
        reasons = []
        if not np.all(np.diff(tail) > 0):
            reasons.append("not strictly increasing over the upper radii")
        if not E[-1] >= 10.0 * E[0]:
            reasons.append("growth factor below 10")
        if reasons:
            failures.append({"direction": d.tolist(), "exergy": E.tolist(), "reason": "; ".join(reasons)})
    return {"directions": int(D.shape[0]), "radii": radii.tolist(), "passed": not failures, "failures": failures}


def verify_report(estimate: GrowthEstimate, probe: dict) -> dict:
    return {
        "c_hat": estimate.c_hat,
        "shift": estimate.shift,
        "p": estimate.p,
        "stable": estimate.stable,
        "sample_count": estimate.sample_count,
        "max_ratio_location": estimate.max_ratio_location.tolist(),
        "failures": probe["failures"],
    }


def write_verify_json(report: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
