"""Reversible-irreversible port-Hamiltonian models built from generating data.

Every callable stored on a :class:`ModelSpec` must broadcast over leading
axes: a state array of shape ``(..., n)`` maps to ``(...)`` for scalars,
``(..., n)`` for gradients, ``(..., n, n)`` (or a plain ``(n, n)``) for the
reversible structure matrix and ``(..., n, m)`` for the input map.  The
evaluation functions below accept either a single state or a batch of
states, which is what lets the transcription code build finite-difference
Jacobians for a whole horizon in a handful of vectorized calls.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, DomainViolation, InvalidParams, NonFinite

__all__ = [
    "ModelSpec",
    "HeatExchangerParams",
    "GasPistonParams",
    "eval_drift",
    "eval_rhs",
    "eval_outputs",
    "poisson_bracket",
    "brackets",
    "entropy_production",
    "structure_matrix",
    "exergy",
    "exergy_grad",
    "availability",
    "audit_structure",
    "make_heat_exchanger",
    "make_gas_piston",
    "pair_matrix",
]

SKEW_RTOL = 1e-12
CASIMIR_RTOL = 1e-10


@dataclass(frozen=True)
class ModelSpec:
    """Generating data of a RIPHS.

    ``jk`` is stored stacked as an ``(N, n, n)`` array; ``gamma`` holds the
    ``N`` positive modulation functions ``gamma_k(x, H_x(x))`` in the same
    order.  ``info`` carries constructor metadata (parameters, derived
    constants) and is not used by the evaluation code.
    """

    n: int
    m: int
    j0: Callable[[np.ndarray], np.ndarray]
    jk: np.ndarray
    hamiltonian: Callable[[np.ndarray], np.ndarray]
    hamiltonian_grad: Callable[[np.ndarray], np.ndarray]
    entropy: Callable[[np.ndarray], np.ndarray]
    entropy_grad: Callable[[np.ndarray], np.ndarray]
    gamma: tuple
    input_map: Callable[[np.ndarray, np.ndarray], np.ndarray]
    t0: float
    domain_guard: Optional[Callable[[np.ndarray], np.ndarray]] = None
    name: str = "riphs"
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise InvalidParams(f"bad dimensions n={self.n}, m={self.m}")
        if not self.t0 > 0:
            raise InvalidParams("reference temperature t0 must be strictly positive")
        jk = np.asarray(self.jk, dtype=float).reshape(-1, self.n, self.n)
        object.__setattr__(self, "jk", jk)
        object.__setattr__(self, "gamma", tuple(self.gamma))
        if len(self.gamma) != jk.shape[0]:
            raise InvalidParams(
                f"{jk.shape[0]} coupling matrices but {len(self.gamma)} gamma functions"
            )
        for k, J in enumerate(jk):
            scale = np.abs(J).max()
            if np.abs(J + J.T).max() > SKEW_RTOL * scale:
                raise InvalidParams(f"coupling matrix J_{k + 1} is not skew-symmetric")

    @property
    def N(self) -> int:
        return self.jk.shape[0]


def _as_state(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (model.n,):
        raise DimensionMismatch(f"expected state of length {model.n}, got shape {x.shape}")
    return x


def _guard(model, x):
    if model.domain_guard is not None and not np.all(model.domain_guard(x)):
        raise DomainViolation(f"state outside the domain of model '{model.name}'")


def _quiet(fn):
    """Silence numpy float warnings; the caller reports non-finite results itself."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(all="ignore"):
            return fn(*args, **kwargs)

    return wrapper


def _finite(value, what):
    if not np.all(np.isfinite(value)):
        raise NonFinite(f"{what} returned non-finite values")
    return value


def _gammas(model, x, hx):
    if model.N == 0:
        return np.zeros(x.shape[:-1] + (0,))
    if x.ndim == 1:
        gam = np.array([g(x, hx) for g in model.gamma], dtype=float)
    else:
        gam = np.stack([np.broadcast_to(g(x, hx), x.shape[:-1]) for g in model.gamma], axis=-1)
    if not np.all(gam > 0):
        if np.all(np.isfinite(gam)) and np.all(np.isfinite(hx)):
            raise InvalidParams("gamma functions must be strictly positive")
        raise NonFinite("gamma returned non-finite values")
    return gam


def poisson_bracket(v_grad, w_grad, J) -> float:
    """``v_grad^T J w_grad`` for a skew-symmetric ``J``."""
    v_grad = np.asarray(v_grad, dtype=float)
    w_grad = np.asarray(w_grad, dtype=float)
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1] or v_grad.shape != (J.shape[0],) or w_grad.shape != (J.shape[1],):
        raise DimensionMismatch(
            f"incompatible shapes {v_grad.shape}, {J.shape}, {w_grad.shape}"
        )
    return float(v_grad @ J @ w_grad)


def _parts(model, x, with_jh=False):
    """Co-energy, entropy gradient, gammas and brackets {S,H}_{J_k} at x.

    With ``with_jh`` also returns the stacked products ``J_k H_x``.  No
    finiteness checks here; callers check their final result.
    """
    hx = model.hamiltonian_grad(x)
    sx = model.entropy_grad(x)
    gam = _gammas(model, x, hx)
    jh = np.matmul(model.jk, hx[..., None, :, None])[..., 0]
    br = np.sum(jh * sx[..., None, :], axis=-1)
    if with_jh:
        return hx, sx, gam, br, jh
    return hx, sx, gam, br


def _drift(model, x, parts):
    hx, _, gam, br, jh = parts
    out = np.matmul(model.j0(x), hx[..., None])[..., 0]
    if model.N:
        out = out + np.sum((gam * br)[..., None] * jh, axis=-2)
    return out


@_quiet
def brackets(model: ModelSpec, x) -> np.ndarray:
    """The N thermodynamic driving forces ``{S, H}_{J_k}(x)``."""
    x = _as_state(model, x)
    _guard(model, x)
    return _parts(model, x)[3]


@_quiet
def entropy_production(model: ModelSpec, x) -> np.ndarray:
    """Irreversible entropy production ``sum_k gamma_k ({S,H}_{J_k})^2``."""
    x = _as_state(model, x)
    _guard(model, x)
    _, _, gam, br = _parts(model, x)
    return _finite(np.sum(gam * br**2, axis=-1), "entropy production")


@_quiet
def structure_matrix(model: ModelSpec, x) -> np.ndarray:
    """Assembled ``J0(x) + sum_k gamma_k {S,H}_{J_k} J_k`` (skew-symmetric)."""
    x = _as_state(model, x)
    _guard(model, x)
    _, _, gam, br = _parts(model, x)
    J0 = np.broadcast_to(model.j0(x), x.shape[:-1] + (model.n, model.n))
    return _finite(J0 + np.einsum("...k,kij->...ij", gam * br, model.jk), "structure matrix")


@_quiet
def eval_drift(model: ModelSpec, x) -> np.ndarray:
    """Uncontrolled drift ``f(x, 0)``."""
    x = _as_state(model, x)
    _guard(model, x)
    return _finite(_drift(model, x, _parts(model, x, with_jh=True)), "drift")


def _input_matrix(model, x, hx):
    g = np.asarray(model.input_map(x, hx), dtype=float)
    return _finite(np.broadcast_to(g, x.shape[:-1] + (model.n, model.m)), "input_map")


@_quiet
def eval_rhs(model: ModelSpec, x, u) -> np.ndarray:
    """Full right-hand side ``f(x, u) = drift(x) + g(x, H_x) u``."""
    x = _as_state(model, x)
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (model.m,):
        raise DimensionMismatch(f"expected control of length {model.m}, got shape {u.shape}")
    _guard(model, x)
    parts = _parts(model, x, with_jh=True)
    g = model.input_map(x, parts[0])
    out = _drift(model, x, parts) + np.matmul(g, u[..., None])[..., 0]
    return _finite(out, "rhs")


@_quiet
def eval_outputs(model: ModelSpec, x):
    """Energy- and entropy-conjugate outputs ``(y_H, y_S)``."""
    x = _as_state(model, x)
    _guard(model, x)
    hx = _finite(model.hamiltonian_grad(x), "hamiltonian_grad")
    sx = _finite(np.broadcast_to(model.entropy_grad(x), x.shape), "entropy_grad")
    g = _input_matrix(model, x, hx)
    return np.einsum("...ij,...i->...j", g, hx), np.einsum("...ij,...i->...j", g, sx)


@_quiet
def exergy(model: ModelSpec, x):
    """``E(x) = H(x) - T0 S(x)``."""
    x = _as_state(model, x)
    _guard(model, x)
    return _finite(model.hamiltonian(x) - model.t0 * model.entropy(x), "exergy")


@_quiet
def exergy_grad(model: ModelSpec, x) -> np.ndarray:
    x = _as_state(model, x)
    _guard(model, x)
    return _finite(model.hamiltonian_grad(x) - model.t0 * model.entropy_grad(x), "exergy_grad")


@_quiet
def availability(model: ModelSpec, x, x_eq) -> float:
    """Energy-based availability ``H(x) - H(x_eq) - H_x(x_eq)^T (x - x_eq)``."""
    x = _as_state(model, x)
    x_eq = _as_state(model, x_eq)
    _guard(model, x)
    _guard(model, x_eq)
    if np.array_equal(x, x_eq):
        return 0.0
    val = model.hamiltonian(x) - model.hamiltonian(x_eq) - model.hamiltonian_grad(x_eq) @ (x - x_eq)
    return float(_finite(val, "availability"))


def audit_structure(model: ModelSpec, x) -> dict:
    """Residuals of the pointwise structural invariants at a single state.

    Returns relative skew defect of ``J0`` and of the assembled structure
    matrix, the relative Casimir defect ``|J0 S_x|`` and the smallest gamma.
    """
    x = _as_state(model, x)
    J0 = np.asarray(model.j0(x), dtype=float)
    sx = np.broadcast_to(model.entropy_grad(x), x.shape)
    hx = model.hamiltonian_grad(x)
    full = structure_matrix(model, x)
    j0_norm = np.abs(J0).max()
    return {
        "j0_skew": np.abs(J0 + J0.T).max() / max(j0_norm, 1e-300) if j0_norm else 0.0,
        "skew": np.abs(full + full.T).max() / (1.0 + np.abs(full).max()),
        "casimir": np.abs(J0 @ sx).max() / (1.0 + j0_norm * np.abs(sx).max()),
        "gamma_min": float(_gammas(model, x, hx).min()) if model.N else np.inf,
    }


# --------------------------------------------------------------------------
# heat exchanger network


@dataclass(frozen=True)
class HeatExchangerParams:
    """Conductivity matrix ``lam`` (W/K) plus reference temperatures."""

    lam: np.ndarray
    t_ref: float = 1.0
    t0: float = 1.0

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        if lam.ndim != 2 or lam.shape[0] != lam.shape[1]:
            raise InvalidParams("lambda must be a square matrix")
        if not np.all(np.isfinite(lam)):
            raise InvalidParams("lambda entries must be finite")
        if np.any(np.diag(lam) != 0):
            raise InvalidParams("lambda must have an exactly zero diagonal")
        if not np.array_equal(lam, lam.T):
            raise InvalidParams("lambda must be symmetric")
        if np.any(lam < 0):
            raise InvalidParams("lambda entries must be nonnegative")
        if not (self.t_ref > 0 and self.t0 > 0):
            raise InvalidParams("t_ref and t0 must be strictly positive")
        lam.setflags(write=False)
        object.__setattr__(self, "lam", lam)


def pair_matrix(n: int, i: int, j: int) -> np.ndarray:
    """Skew matrix coupling compartments i < j: -1 at (i, j), +1 at (j, i)."""
    J = np.zeros((n, n))
    J[i, j] = -1.0
    J[j, i] = 1.0
    return J


def make_heat_exchanger(p: HeatExchangerParams) -> ModelSpec:
    """Compartment network with state = compartment entropies.

    One irreversible coupling per unordered pair with positive conductivity.
    The modulation ``gamma_(i,j) = lam_ij / (T_i T_j)`` reproduces Fourier
    conduction ``x_i' = -sum_j lam_ij (T_i - T_j) / T_i`` exactly.
    """
    if not isinstance(p, HeatExchangerParams):
        raise InvalidParams("expected HeatExchangerParams")
    lam, t_ref = p.lam, float(p.t_ref)
    n = lam.shape[0]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if lam[i, j] > 0]

    def make_gamma(i, j, lij):
        return lambda x, hx: lij / (hx[..., i] * hx[..., j])

    eye = np.eye(n)
    zero = np.zeros((n, n))

    return ModelSpec(
        n=n,
        m=n,
        j0=lambda x: zero,
        jk=np.array([pair_matrix(n, i, j) for i, j in pairs]).reshape(-1, n, n),
        hamiltonian=lambda x: t_ref * np.sum(np.exp(x), axis=-1),
        hamiltonian_grad=lambda x: t_ref * np.exp(x),
        entropy=lambda x: np.sum(x, axis=-1),
        entropy_grad=lambda x: np.ones_like(x),
        gamma=[make_gamma(i, j, lam[i, j]) for i, j in pairs],
        input_map=lambda x, hx: eye,
        t0=float(p.t0),
        name="heat_exchanger",
        info={"kind": "heat_exchanger", "params": p, "pairs": pairs},
    )


# --------------------------------------------------------------------------
# gas-piston system


@dataclass(frozen=True)
class GasPistonParams:
    n_mol: float = 1.0
    gas_constant: float = 1.0
    s_ref: float = 0.0
    t_ref: float = 1.0
    p_ref: float = 1.0
    mass: float = 1.0
    g_acc: float = 1.0
    area: float = 1.0
    kappa: float = 1.0
    t0: float = 1.0
    K1: float = field(init=False)
    K2: float = field(init=False)
    K3: float = field(init=False)
    K4: float = field(init=False)

    def __post_init__(self):
        positive = ("n_mol", "gas_constant", "t_ref", "p_ref", "mass", "g_acc", "area", "kappa", "t0")
        bad = [name for name in positive if not getattr(self, name) > 0]
        if bad or not np.isfinite(self.s_ref):
            raise InvalidParams(f"parameters must be strictly positive: {bad or ['s_ref']}")
        nrt = self.n_mol * self.gas_constant * self.t_ref
        k1 = 1.5 * nrt ** (5 / 3) * self.p_ref ** (-2 / 3) * np.exp(-(2 / 3) * self.s_ref / self.gas_constant)
        object.__setattr__(self, "K1", float(k1))
        object.__setattr__(self, "K2", 2.0 / (3.0 * self.gas_constant * self.n_mol))
        object.__setattr__(self, "K3", 1.0 / (2.0 * self.mass))
        object.__setattr__(self, "K4", self.mass * self.g_acc / self.area)


def make_gas_piston(p: GasPistonParams, include_potential: bool = True) -> ModelSpec:
    """Ideal gas under a piston; state ``(S, V, p)``, input = entropy flow.

    ``include_potential=False`` drops the ``(m g / A) V`` term from the
    Hamiltonian, which removes the ``-m g`` force from the momentum equation.
    """
    if not isinstance(p, GasPistonParams):
        raise InvalidParams("expected GasPistonParams")
    K1, K2, K3 = p.K1, p.K2, p.K3
    K4 = p.K4 if include_potential else 0.0
    A, m, kappa = p.area, p.mass, p.kappa

    J0 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, A], [0.0, -A, 0.0]])
    J1 = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    g = np.array([[1.0], [0.0], [0.0]])

    def internal(x):
        return K1 * np.exp(K2 * x[..., 0]) * x[..., 1] ** (-2 / 3)

    def hamiltonian(x):
        return internal(x) + K3 * x[..., 2] ** 2 + K4 * x[..., 1]

    def hamiltonian_grad(x):
        u = internal(x)
        return np.stack([K2 * u, -(2 / 3) * u / x[..., 1] + K4, x[..., 2] / m], axis=-1)

    def entropy_grad(x):
        e1 = np.zeros_like(x)
        e1[..., 0] = 1.0
        return e1

    return ModelSpec(
        n=3,
        m=1,
        j0=lambda x: J0,
        jk=J1[None],
        hamiltonian=hamiltonian,
        hamiltonian_grad=hamiltonian_grad,
        entropy=lambda x: x[..., 0],
        entropy_grad=entropy_grad,
        # temperature is the first co-energy variable
        gamma=[lambda x, hx: kappa / hx[..., 0]],
        input_map=lambda x, hx: g,
        t0=float(p.t0),
        domain_guard=lambda x: x[..., 1] > 0,
        name="gas_piston",
        info={"kind": "gas_piston", "params": p, "include_potential": include_potential},
    )
