"""Diffusive-scaling convergence experiments.

Measures how the kinetic mode semigroups approach their fluid limits as the
scaling parameter shrinks: error tables over (eps, t), fitted rates with
confidence intervals, the acoustic initial layer, second-order corrector
comparisons, and the stationary-phase decay of radial oscillatory integrals.
Each experiment returns a ConvergenceReport whose JSON and CSV forms are
byte-stable for a fixed configuration and seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import spherical_jn

from .collision_ops import CollisionMatrices
from .dispersion import expansion_coefficients
from .fluid_limits import Y2_mode, _heat_basis, transport_coefficients
from .mode_operators import (
    _decomposition,
    assemble_A_tilde,
    assemble_B,
    propagator_matrix,
    semigroup_split,
)
from .velocity_basis import v1_full


class ConvergenceError(RuntimeError):
    """Invalid experiment configuration, data, or a degenerate fit."""


_EPS_DEFAULT = (0.2, 0.1, 0.05, 0.025, 0.0125)
_DATA_KINDS = ("generic", "well_prepared")
_SHAPE_KINDS = _DATA_KINDS + ("second_order",)
_NORMS = ("H0", "H1", "H2", "Linf_proxy")

# acceptance bands for the pass/fail flags
_TOL_FIRST_SLOPE = 0.15
_TOL_SECOND_SLOPE = 0.2
_TOL_LAYER = 0.2
_TOL_OSC = 0.1
_TOL_DECAY = 0.15
_TOL_GAP = 0.2
_T0_TOL = 1e-10


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Sweep layout shared by the convergence experiments.

    The mode aggregation uses an n_s-point Gauss-Legendre rule on
    [0, s_max(eps)] where s_max(eps) = min(s_cap, regime_radius/eps - 1)
    keeps every resolved mode inside the low-frequency regime; the neglected
    band carries only the (recorded) tail mass of the data profiles.
    """

    eps_list: tuple[float, ...] = _EPS_DEFAULT
    data_kind: str = "well_prepared"
    norm: str = "H2"
    n_s: int = 48
    s_cap: float = 4.0
    regime_radius: float = 0.6
    t_min: float = 1e-3
    t_max: float = 1e2
    n_t: int = 25
    profile_width: float = 0.6
    seed: int = 20230823

    def __post_init__(self):
        eps = tuple(float(e) for e in self.eps_list)
        object.__setattr__(self, "eps_list", eps)
        if len(eps) < 2 or any(e <= 0 for e in eps):
            raise ConvergenceError("eps_list must contain at least two positive values")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConvergenceError("eps_list must be strictly decreasing")
        if self.data_kind not in _DATA_KINDS:
            raise ConvergenceError(
                f"unknown data_kind {self.data_kind!r}: expected one of {', '.join(_DATA_KINDS)}"
            )
        if self.norm not in _NORMS:
            raise ConvergenceError(
                f"unknown norm {self.norm!r}: expected one of {', '.join(_NORMS)}"
            )
        if not 0 < self.t_min < self.t_max:
            raise ConvergenceError("time grid needs 0 < t_min < t_max")
        if self.n_t < 4:
            raise ConvergenceError("time grid needs at least four points")
        if self.n_s < 8:
            raise ConvergenceError("mode grid needs at least eight points")
        if self.profile_width <= 0:
            raise ConvergenceError("profile width must be positive")

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(mapping) - known
        if extra:
            raise ConvergenceError(f"unknown configuration keys: {sorted(extra)}")
        kwargs = dict(mapping)
        if "eps_list" in kwargs:
            kwargs["eps_list"] = tuple(float(e) for e in kwargs["eps_list"])
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return {
            "eps_list": list(self.eps_list),
            "data_kind": self.data_kind,
            "norm": self.norm,
            "n_s": self.n_s,
            "s_cap": self.s_cap,
            "regime_radius": self.regime_radius,
            "t_min": self.t_min,
            "t_max": self.t_max,
            "n_t": self.n_t,
            "profile_width": self.profile_width,
            "seed": self.seed,
        }

    def t_grid(self) -> np.ndarray:
        return np.geomspace(self.t_min, self.t_max, self.n_t)

    def s_max(self, eps: float) -> float:
        cap = min(self.s_cap, self.regime_radius / eps - 1.0)
        if cap <= 0.5:
            raise ConvergenceError(
                f"regime radius {self.regime_radius} leaves no resolvable modes at eps={eps}"
            )
        return cap

    def s_grid(self, eps: float) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and plain dt-weights on [0, s_max(eps)]."""
        x, w = np.polynomial.legendre.leggauss(self.n_s)
        half = 0.5 * self.s_max(eps)
        return half * (x + 1.0), half * w


# ---------------------------------------------------------------------------
# rate fitting
# ---------------------------------------------------------------------------

@dataclass
class RateFit:
    exponent: float
    intercept: float
    ci: float
    rss: float
    n_points: int

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "intercept": self.intercept,
            "ci": self.ci,
            "rss": self.rss,
            "n_points": self.n_points,
        }


def rate_fit(x, y) -> RateFit:
    """Least-squares power-law fit y ~ C x^p in log-log coordinates.

    The half-width ci is the 1.96-sigma normal interval built from the
    residual variance; an exact power law therefore reports ci = 0.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ConvergenceError("rate fit needs matching one-dimensional samples")
    if x.size < 4:
        raise ConvergenceError("rate fit needs at least four points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConvergenceError("rate fit needs positive abscissae and values")
    lx, ly = np.log(x), np.log(y)
    if np.ptp(lx) < 1e-12:
        raise ConvergenceError("rate fit abscissae are degenerate (repeated values)")
    design = np.column_stack([lx, np.ones_like(lx)])
    coef, _, _, _ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - design @ coef
    rss = float(resid @ resid)
    sigma2 = rss / (x.size - 2)
    gram_inv = np.linalg.inv(design.T @ design)
    ci = 1.96 * math.sqrt(max(sigma2 * gram_inv[0, 0], 0.0))
    return RateFit(
        exponent=float(coef[0]),
        intercept=float(coef[1]),
        ci=float(ci),
        rss=rss,
        n_points=int(x.size),
    )


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------

def _positive_profile(rng: np.random.Generator, width: float) -> np.ndarray:
    """Coefficients (c0, c2) of (c0 + c2 s^2) exp(-s^2/(2w^2)), c0, c2 > 0.

    Positivity keeps the absolute-value mode aggregation equal to the plain
    radial integral, which the t = 0 bookkeeping identities rely on.
    """
    return rng.uniform(0.5, 1.5, size=2)


def _eval_profile(coefs: np.ndarray, width: float, s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    return (coefs[0] + coefs[1] * s**2) * np.exp(-0.5 * (s / width) ** 2)


@dataclass
class InitialData:
    """Mode-wise initial states: radial profiles times fixed velocity shapes.

    The kinetic shape deliberately carries no axial-momentum component so the
    compressible part of generic data sits entirely in the density/heat
    mixing direction; the front-sample bookkeeping of the layer experiment
    is then exact at t = 0.
    """

    kind: str
    seed: int
    width: float
    basis: object
    profile_macro: np.ndarray
    profile_micro: np.ndarray
    profile_field: np.ndarray
    boltzmann_macro: np.ndarray
    boltzmann_micro: np.ndarray
    vmb_macro: np.ndarray
    vmb_micro: np.ndarray
    field_amp: np.ndarray

    def boltzmann_states(self, s: np.ndarray) -> np.ndarray:
        pa = _eval_profile(self.profile_macro, self.width, s)
        pb = _eval_profile(self.profile_micro, self.width, s)
        return (
            pa[:, None] * self.boltzmann_macro[None, :]
            + pb[:, None] * self.boltzmann_micro[None, :]
        ).astype(complex)

    def vmb_states(self, s: np.ndarray) -> np.ndarray:
        """Electromagnetic states in the reduced layout (kinetic, X, Y)."""
        n = len(s)
        dim = self.basis.dim
        pa = _eval_profile(self.profile_macro, self.width, s)
        pb = _eval_profile(self.profile_micro, self.width, s)
        pf = _eval_profile(self.profile_field, self.width, s)
        out = np.zeros((n, dim + 4), dtype=complex)
        out[:, :dim] = (
            pa[:, None] * self.vmb_macro[None, :]
            + pb[:, None] * self.vmb_micro[None, :]
        )
        out[:, dim:] = pf[:, None] * self.field_amp[None, :]
        return out

    def vmb_fields(self, s: np.ndarray):
        """Full (rho0, E0, B0) per mode in the (omega, p1, p2) frame."""
        s = np.asarray(s, dtype=float)
        states = self.vmb_states(s)
        rho = states[:, 0]
        x2, x3, y2, y3 = states[:, -4], states[:, -3], states[:, -2], states[:, -1]
        e0 = np.stack([-1j * rho / s, x3, -x2], axis=1)
        b0 = np.stack([np.zeros_like(rho), y3, -y2], axis=1)
        return rho, e0, b0

    def constraint_residual(self, s: np.ndarray) -> float:
        rho, e0, b0 = self.vmb_fields(s)
        s = np.asarray(s, dtype=float)
        div = np.abs(rho - 1j * s * e0[:, 0])
        mag = np.abs(b0[:, 0])
        return float(max(div.max(), mag.max()))


def make_initial_data(kind: str, cfg: ExperimentConfig,
                      cm: CollisionMatrices) -> InitialData:
    """Seeded per-mode initial states for both kinetic systems.

    generic        free density/heat, transverse momentum, microscopic and
                   field content (no axial momentum, see InitialData);
    well_prepared  kinetic parts restricted to the heat span and, on the
                   electromagnetic side, to pure density, so every fluid
                   compatibility condition holds with zero defect;
    second_order   purely microscopic kinetic data with zero initial fields,
                   the preparation the corrector comparisons require.
    """
    if kind not in _SHAPE_KINDS:
        raise ConvergenceError(
            f"unknown data kind {kind!r}: expected one of {', '.join(_SHAPE_KINDS)}"
        )
    basis = cm.basis
    rng = np.random.default_rng(cfg.seed)
    prof_a = _positive_profile(rng, cfg.profile_width)
    prof_b = _positive_profile(rng, cfg.profile_width)
    prof_f = _positive_profile(rng, cfg.profile_width)
    # draws below are unconditional so every kind consumes the same stream
    macro_coef = rng.uniform(0.5, 1.5, size=4)
    micro_seed = rng.standard_normal(basis.dim)
    vmb_macro_coef = rng.uniform(0.5, 1.5, size=5)
    vmb_micro_seed = rng.standard_normal(basis.dim)
    field_amp = rng.uniform(-1.0, 1.0, size=4)

    chi = [basis.chi(j) for j in range(5)]
    h0 = math.sqrt(0.4) * chi[0] - math.sqrt(0.6) * chi[4]
    p1m = basis.projection_matrix("P1")
    micro = p1m @ micro_seed
    micro /= np.linalg.norm(micro)
    vmb_micro = p1m @ vmb_micro_seed
    vmb_micro /= np.linalg.norm(vmb_micro)

    if kind == "generic":
        b_macro = (macro_coef[0] * chi[0] + macro_coef[1] * chi[2]
                   + macro_coef[2] * chi[3] + macro_coef[3] * chi[4])
        b_micro = micro
        g_macro = sum(c * v for c, v in zip(vmb_macro_coef, chi))
        g_micro = vmb_micro
    elif kind == "well_prepared":
        b_macro = (macro_coef[0] * h0 + macro_coef[1] * chi[2]
                   + macro_coef[2] * chi[3])
        b_micro = np.zeros(basis.dim)
        g_macro = vmb_macro_coef[0] * chi[0]
        g_micro = np.zeros(basis.dim)
    else:  # second_order
        b_macro = np.zeros(basis.dim)
        b_micro = micro
        # single radial profile so the corrector data factors exactly
        g_macro = np.zeros(basis.dim)
        g_micro = (vmb_macro_coef[1] * chi[1] + vmb_macro_coef[2] * chi[2]
                   + vmb_macro_coef[3] * chi[4] + vmb_micro)
        g_micro = g_micro / np.linalg.norm(g_micro)
        field_amp = np.zeros(4)

    data = InitialData(
        kind=kind,
        seed=cfg.seed,
        width=cfg.profile_width,
        basis=basis,
        profile_macro=prof_a,
        profile_micro=prof_b,
        profile_field=prof_f,
        boltzmann_macro=b_macro,
        boltzmann_micro=b_micro,
        vmb_macro=g_macro,
        vmb_micro=g_micro,
        field_amp=field_amp,
    )
    probe = np.linspace(0.1, cfg.s_cap, 7)
    residual = data.constraint_residual(probe)
    if residual > 1e-12:
        idx = int(np.argmax(np.abs(probe)))
        raise ConvergenceError(
            f"compatibility residual {residual:.2e} at mode index {idx}"
        )
    return data


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


@dataclass
class ConvergenceReport:
    """Error tables, fitted rates, pass/fail flags, and environment notes."""

    experiment: str
    config: dict
    eps: list
    t: list
    errors: dict[str, list]
    fits: dict[str, dict] = field(default_factory=dict)
    flags: dict[str, bool] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def passed(self) -> bool:
        return all(self.flags.values())

    def to_json(self) -> str:
        payload = {
            "experiment": self.experiment,
            "config": _plain(self.config),
            "eps": _plain(self.eps),
            "t": _plain(self.t),
            "errors": _plain(self.errors),
            "fits": _plain(self.fits),
            "flags": _plain(self.flags),
            "metadata": _plain(self.metadata),
        }
        return json.dumps(payload, sort_keys=True, indent=2)

    def csv_rows(self) -> list[str]:
        rows = ["experiment,stream,eps,t,value"]
        eps = self.eps if self.eps else [float("nan")]
        for stream in sorted(self.errors):
            table = self.errors[stream]
            for i, e in enumerate(eps):
                values = table[i] if self.eps else table
                for j, t in enumerate(self.t):
                    rows.append(
                        f"{self.experiment},{stream},{float(e)!r},{float(t)!r},"
                        f"{float(values[j])!r}"
                    )
        return rows

    def write(self, json_path, csv_path) -> None:
        with open(json_path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")
        with open(csv_path, "w") as fh:
            fh.write("\n".join(self.csv_rows()))
            fh.write("\n")


# ---------------------------------------------------------------------------
# kinetic propagation helpers
# ---------------------------------------------------------------------------

class _ModeEvolver:
    """One diagonalization per mode, reused across the whole time grid."""

    def __init__(self, op):
        self.op = op
        dec = _decomposition(op)
        self.defective = dec[0] != "eig"
        if not self.defective:
            _, self.lam, self.vr, self.vinv, _ = dec

    def states(self, u0: np.ndarray, times: np.ndarray) -> np.ndarray:
        taus = np.asarray(times, dtype=float) / self.op.eps**2
        if self.defective:
            return np.stack([propagator_matrix(self.op, t) @ u0 for t in times])
        coef = self.vinv @ u0
        return (np.exp(np.outer(taus, self.lam)) * coef[None, :]) @ self.vr.T


def _evolve_grid(assemble: Callable, s_nodes: np.ndarray, eps: float,
                 cm: CollisionMatrices, states0: np.ndarray,
                 times: np.ndarray, failures: list) -> tuple[np.ndarray, np.ndarray]:
    """Propagate every mode; returns (n_t, n_s, dim) states and a keep mask."""
    n_s = len(s_nodes)
    out = np.zeros((len(times), n_s, states0.shape[1]), dtype=complex)
    keep = np.ones(n_s, dtype=bool)
    for i, s in enumerate(s_nodes):
        op = assemble(float(s), eps, cm)
        ev = _ModeEvolver(op)
        st = ev.states(states0[i], times)
        g = op.metric_diag
        n0 = math.sqrt(float(np.real(states0[i].conj() * g @ states0[i])))
        n1 = math.sqrt(float(np.real(st[-1].conj() * g @ st[-1])))
        if n1 > n0 * (1.0 + 1e-6) + 1e-12:
            keep[i] = False
            failures.append({"eps": float(eps), "s": float(s),
                             "reason": f"contraction violated ({n1 / max(n0, 1e-300):.3e})"})
            continue
        out[:, i, :] = st
    return out, keep


def _agg_weights(cfg: ExperimentConfig, s: np.ndarray, w: np.ndarray,
                 norm: str | None = None) -> np.ndarray:
    """Quadrature weights for the squared Sobolev mode aggregation."""
    label = cfg.norm if norm is None else norm
    k = {"H0": 0, "H1": 1, "H2": 2}.get(label)
    if k is None:
        raise ConvergenceError(
            f"unknown norm {label!r}: expected one of {', '.join(_NORMS)}"
        )
    return w * s**2 * (1.0 + s**2) ** k


def _sup_weighted(times: np.ndarray, errs: np.ndarray, power: float,
                  t_floor: float = 0.0) -> float:
    mask = times >= t_floor
    return float(np.max((1.0 + times[mask]) ** power * errs[mask]))


def _tail_mass(data: InitialData, cfg: ExperimentConfig, eps: float) -> float:
    """Data mass (squared, H2-weighted) beyond the aggregation cutoff."""
    lo = cfg.s_max(eps)
    s = np.linspace(lo, lo + 8.0 * cfg.profile_width, 200)
    w = np.full_like(s, s[1] - s[0])
    wq = _agg_weights(cfg, s, w, "H2")
    f = data.boltzmann_states(s)
    v = data.vmb_states(s)
    m = float(wq @ np.sum(np.abs(f) ** 2, axis=1)
              + wq @ np.sum(np.abs(v) ** 2, axis=1))
    return m


def _compensated_slopes(eps: np.ndarray, y: np.ndarray) -> tuple[dict, str]:
    """Raw and log-compensated power-law fits of y(eps), best match by RSS."""
    fits = {}
    best, best_rss = "raw", math.inf
    for tag, comp in (("raw", 1.0), ("log", np.abs(np.log(eps))),
                      ("log2", np.log(eps) ** 2)):
        fit = rate_fit(eps, y / comp)
        fits[tag] = fit
        if fit.rss < best_rss:
            best, best_rss = tag, fit.rss
    return fits, best


def _environment_metadata(cm: CollisionMatrices, cfg: ExperimentConfig) -> dict:
    tc = transport_coefficients(cm)
    exp = expansion_coefficients(cm)
    return {
        "basis": {"radial_order": cm.basis.spec.radial_order,
                  "angular_max": cm.basis.spec.angular_max,
                  "dim": cm.basis.dim},
        "collision_gap_estimate": cm.mu_estimate,
        "eta": tc.eta,
        "kappa0": tc.kappa0,
        "kappa1": tc.kappa1,
        "sound_speed": exp["boltzmann_1"][0],
        "branch_rates": {str(j): tc.a_list[j] for j in sorted(tc.a_list)},
        "truncation_delta": dict(tc.truncation_delta),
        "split_radii": {"r0": 0.1, "r1": 10.0},
        "aggregation_radius": cfg.regime_radius,
        "seed": cfg.seed,
    }


# ---------------------------------------------------------------------------
# first-order experiment
# ---------------------------------------------------------------------------

def first_order_experiment(cfg: ExperimentConfig,
                           cm: CollisionMatrices) -> ConvergenceReport:
    """Kinetic-versus-fluid error sweep at first order in the scaling.

    Streams per (eps, t): the electromagnetic error against the damped-Maxwell
    mode flow, the incompressible kinetic error against the heat flow, the
    compressible kinetic amplitude (an L1 mode integral, reported as the
    labelled upper proxy for the supremum norm), and the macroscopic /
    microscopic kinetic norms whose decay rates the report also fits.
    """
    tc = transport_coefficients(cm)
    basis = cm.basis
    data = make_initial_data(cfg.data_kind, cfg, cm)
    t_grid = cfg.t_grid()
    times = np.concatenate([[0.0], t_grid])
    eps_arr = np.asarray(cfg.eps_list)

    chi = [basis.chi(j) for j in range(5)]
    ht1 = math.sqrt(0.6) * chi[0] + math.sqrt(0.4) * chi[4]
    hs = np.array(_heat_basis(basis))
    heat_rates = np.array([tc.a_list[0], tc.a_list[2], tc.a_list[3]])
    p0m = basis.projection_matrix("P0")
    p1m = basis.projection_matrix("P1")
    dimk = basis.dim

    streams = {name: [] for name in
               ("vmb", "boltzmann_perp", "boltzmann_par_proxy",
                "boltzmann_p0", "boltzmann_p1")}
    failures: list = []
    defects = {"vmb": [], "boltzmann": []}
    tail = []

    for eps in cfg.eps_list:
        s, w = cfg.s_grid(eps)
        wq = _agg_weights(cfg, s, w)
        wl = w * s**2
        f0 = data.boltzmann_states(s)
        v0 = data.vmb_states(s)
        tail.append(_tail_mass(data, cfg, eps))

        kin_b, keep_b = _evolve_grid(assemble_B, s, eps, cm, f0, times, failures)
        kin_v, keep_v = _evolve_grid(assemble_A_tilde, s, eps, cm, v0, times, failures)
        wq_b, wq_v = wq * keep_b, wq * keep_v
        wl_b = wl * keep_b

        # fluid references; the heat coefficients factor through the data
        heat_coef = f0 @ hs.T                                  # (n_s, 3)
        rho0, e0, b0 = data.vmb_fields(s)

        # defect identities at t = 0
        db = np.sqrt(wq_b @ np.sum(np.abs(f0 @ p1m.T) ** 2, axis=1))
        vd = v0.copy()
        vd[:, 0] = 0.0
        vd[:, dimk:] = 0.0
        dv = np.sqrt(wq_v @ np.sum(np.abs(vd) ** 2, axis=1))
        defects["boltzmann"].append(float(db))
        defects["vmb"].append(float(dv))

        errs = {name: np.zeros(len(times)) for name in streams}
        for jt, t in enumerate(times):
            decay = np.exp(-np.outer(s**2 * t, heat_rates))    # (n_s, 3)
            fluid_b = (heat_coef * decay) @ hs                 # (n_s, dim)
            kb = kin_b[jt]
            par1 = kb @ chi[1]
            parh = kb @ ht1
            perp = kb - np.outer(par1, chi[1]) - np.outer(parh, ht1)
            diff = perp - fluid_b
            errs["boltzmann_perp"][jt] = math.sqrt(wq_b @ np.sum(np.abs(diff) ** 2, axis=1))
            errs["boltzmann_par_proxy"][jt] = float(
                wl_b @ np.sqrt(np.abs(par1) ** 2 + np.abs(parh) ** 2))
            errs["boltzmann_p0"][jt] = math.sqrt(
                wq_b @ np.sum(np.abs(kb @ p0m.T) ** 2, axis=1))
            errs["boltzmann_p1"][jt] = math.sqrt(
                wq_b @ np.sum(np.abs(kb @ p1m.T) ** 2, axis=1))

            kv = kin_v[jt]
            fl = np.zeros_like(kv)
            for i, sv in enumerate(s):
                if not keep_v[i]:
                    continue
                st = Y2_mode(float(t), float(sv), rho0[i], e0[i], b0[i], tc)
                fl[i, 0] = st.coefficients[0]
                fl[i, dimk:] = st.coefficients[1:]
            dvt = kv - fl
            gsq = np.sum(np.abs(dvt) ** 2, axis=1) + (1.0 / s**2) * np.abs(dvt[:, 0]) ** 2
            errs["vmb"][jt] = math.sqrt(wq_v @ gsq)
        for name in streams:
            streams[name].append(errs[name].tolist())

    report = ConvergenceReport(
        experiment="first_order",
        config=cfg.as_dict(),
        eps=list(cfg.eps_list),
        t=times.tolist(),
        errors={k: v for k, v in streams.items()},
    )
    md = _environment_metadata(cm, cfg)
    md["tail_mass_bound"] = tail
    md["propagation_failures"] = failures
    total = 2 * cfg.n_s * len(cfg.eps_list)
    md["coverage"] = 1.0 - len(failures) / total
    md["t0_defect"] = defects
    report.metadata = md

    err_b = np.array(streams["boltzmann_perp"])
    err_v = np.array(streams["vmb"])
    report.flags["t0_identity_boltzmann"] = bool(np.all(
        np.abs(err_b[:, 0] - np.array(defects["boltzmann"]))
        <= _T0_TOL * np.maximum(1.0, np.array(defects["boltzmann"]))))
    report.flags["t0_identity_vmb"] = bool(np.all(
        np.abs(err_v[:, 0] - np.array(defects["vmb"]))
        <= _T0_TOL * np.maximum(1.0, np.array(defects["vmb"]))))

    if cfg.data_kind == "well_prepared":
        for tag, table in (("boltzmann", err_b), ("vmb", err_v)):
            y = np.array([_sup_weighted(times, row, 0.75) for row in table])
            fits, best = _compensated_slopes(eps_arr, y)
            for comp, f in fits.items():
                key = f"eps_slope_{tag}" if comp == "raw" else f"eps_slope_{tag}_{comp}"
                report.fits[key] = f.as_dict()
            report.metadata[f"best_compensator_{tag}"] = best
            report.flags[f"eps_slope_{tag}"] = bool(
                abs(fits["raw"].exponent - 1.0) <= _TOL_FIRST_SLOPE)
        late = times >= 1.0
        mono = True
        for table in (err_b, err_v):
            block = table[:, late]
            mono = mono and bool(np.all(block[1:] <= block[:-1] + 1e-12))
        report.flags["eps_monotone"] = mono

    # macroscopic / microscopic kinetic decay rates at the sharpest eps
    fit_window = t_grid >= 5.0
    if fit_window.sum() < 4:
        fit_window = np.zeros_like(fit_window)
        fit_window[-4:] = True
    tw = times[1:][fit_window]
    p0_fit = rate_fit(1.0 + tw, np.array(streams["boltzmann_p0"][-1])[1:][fit_window])
    report.fits["boltzmann_p0_decay"] = p0_fit.as_dict()
    report.flags["p0_decay_rate"] = bool(abs(p0_fit.exponent + 0.75) <= _TOL_DECAY)
    p1_levels = []
    for i, eps in enumerate(cfg.eps_list):
        f = rate_fit(1.0 + tw, np.array(streams["boltzmann_p1"][i])[1:][fit_window])
        p1_levels.append(math.exp(f.intercept))
        if i == len(cfg.eps_list) - 1:
            report.fits["boltzmann_p1_decay"] = f.as_dict()
            report.flags["p1_decay_rate"] = bool(abs(f.exponent + 1.25) <= _TOL_DECAY)
    pref = rate_fit(eps_arr, np.array(p1_levels))
    report.fits["p1_prefactor"] = pref.as_dict()
    report.flags["p1_prefactor_slope"] = bool(abs(pref.exponent - 1.0) <= _TOL_DECAY)

    if cfg.data_kind == "generic":
        gap = transient_rate_check(cfg, cm)
        report.fits["transient_rate"] = {"fitted_b": gap["fitted_b"],
                                         "split_b": gap["split_b"]}
        report.flags["transient_gap_match"] = gap["match"]
    return report


def transient_rate_check(cfg: ExperimentConfig, cm: CollisionMatrices,
                         s0: float = 1.0, eps: float | None = None) -> dict:
    """Fit the exponential transient of the error and compare with the gap.

    The perpendicular error carries an exponentially decaying term whose
    coefficient sits in the remainder part of the semigroup splitting; the
    splitting projector extracts it from a generic trajectory without the
    O(eps) bulk floor, and its fitted rate over the same diffusive-time
    window the splitting itself uses must agree with measured_gap_b.
    """
    eps = cfg.eps_list[len(cfg.eps_list) // 2] if eps is None else eps
    data = make_initial_data("generic", cfg, cm)
    f0 = data.boltzmann_states(np.array([s0]))[0]
    op = assemble_B(s0, eps, cm)
    split = semigroup_split(op)
    gap = float(split.measured_gap_b)
    if not math.isfinite(gap) or gap <= 0:
        raise ConvergenceError("semigroup splitting reported no usable gap")
    ev = _ModeEvolver(op)
    taus = np.linspace(1.0 / gap, 14.0 / gap, 10)
    u0 = split.S3_part @ f0
    norms = np.array([
        np.linalg.norm(ev.states(u0, np.array([tau * eps**2]))[0])
        for tau in taus
    ])
    good = norms > 1e-12
    if good.sum() < 4:
        raise ConvergenceError("microscopic transient too weak for a rate fit")
    coef = np.polyfit(taus[good], np.log(norms[good]), 1)
    fitted_b = float(-coef[0])
    match = bool(abs(fitted_b - gap) <= _TOL_GAP * gap)
    return {"fitted_b": fitted_b, "split_b": gap, "match": match,
            "eps": float(eps), "s": float(s0)}


# ---------------------------------------------------------------------------
# initial layer
# ---------------------------------------------------------------------------

def initial_layer_profile(cfg: ExperimentConfig, cm: CollisionMatrices,
                          n_layer: int = 240, n_tau: int = 21,
                          tau_max: float = 20.0, tau_fit_min: float = 3.0,
                          layer_width: float = 0.6) -> ConvergenceReport:
    """Front-sampled compressible amplitude over the first acoustic times.

    The compressible part of the kinetic mode solution is reconstructed near
    the acoustic cone |x| = (sound speed) * t/eps with the exact spherical
    kernels (sinc for the scalar mixing direction, the first spherical
    Bessel function for the axial-momentum direction).  The outgoing shell
    vanishes exactly on the cone for pressure-type data, so the amplitude is
    maximised over a few offsets spanning the data's position-space width.
    Generic data fits a power of tau = t/eps; well-prepared data has no
    layer and the profile is compared against the scaled bulk error instead.

    The power fit starts at tau_fit_min: before roughly three acoustic
    times the shell has not fully detached from the central bump and the
    formation transient steepens the apparent decay.  The bare tau
    abscissa is used because over a finite window the offset in (1 + tau)
    is indistinguishable from the subleading corrections to the
    stationary-phase decay; both choices converge to the same exponent as
    the window grows.
    """
    eps = cfg.eps_list[-1]
    tc = transport_coefficients(cm)
    basis = cm.basis
    data = make_initial_data(cfg.data_kind, replace(cfg, profile_width=layer_width), cm)
    mu = expansion_coefficients(cm)["boltzmann_1"][0]

    s_top = 4.0 * layer_width
    x_gl, w_gl = np.polynomial.legendre.leggauss(n_layer)
    half = 0.5 * s_top
    s = half * (x_gl + 1.0)
    w = half * w_gl
    f0 = data.boltzmann_states(s)

    chi1 = basis.chi(1)
    ht1 = math.sqrt(0.6) * basis.chi(0) + math.sqrt(0.4) * basis.chi(4)
    hs = np.array(_heat_basis(basis))
    heat_rates = np.array([tc.a_list[0], tc.a_list[2], tc.a_list[3]])
    heat_coef = f0 @ hs.T

    taus = np.linspace(0.0, tau_max, n_tau)
    times = eps * taus
    failures: list = []
    kin, keep = _evolve_grid(assemble_B, s, eps, cm, f0, times, failures)
    wk = w * keep

    values = np.zeros(n_tau)
    bulk = np.zeros(n_tau)
    wq = _agg_weights(cfg, s, wk, "H2")
    offsets = np.linspace(0.0, 2.0, 5) / layer_width
    for j, tau in enumerate(taus):
        kb = kin[j]
        c1 = kb @ chi1
        ch = kb @ ht1
        best = 0.0
        for off in offsets:
            radius = mu * tau + off
            a0 = np.sum(wk * s**2 * np.sinc(s * radius / math.pi) * ch)
            a1 = np.sum(wk * s**2 * spherical_jn(1, s * radius) * c1)
            best = max(best, math.hypot(abs(a0), abs(a1)))
        values[j] = best
        decay = np.exp(-np.outer(s**2 * times[j], heat_rates))
        fluid = (heat_coef * decay) @ hs
        perp = kb - np.outer(c1, chi1) - np.outer(ch, ht1)
        bulk[j] = math.sqrt(wq @ np.sum(np.abs(perp - fluid) ** 2, axis=1))

    proxy0 = float(np.sum(
        wk * s**2 * np.sqrt(np.abs(f0 @ chi1) ** 2 + np.abs(f0 @ ht1) ** 2)))
    scale = float(np.sum(wk * s**2 * np.linalg.norm(f0, axis=1)))

    report = ConvergenceReport(
        experiment="initial_layer",
        config=cfg.as_dict(),
        eps=[eps],
        t=taus.tolist(),
        errors={"layer_front": [values.tolist()],
                "bulk_perp": [bulk.tolist()]},
    )
    report.metadata = _environment_metadata(cm, cfg)
    report.metadata["propagation_failures"] = failures
    report.metadata["amplitude_t0"] = values[0]
    report.metadata["par_proxy_t0"] = proxy0
    report.flags["t0_amplitude"] = bool(
        abs(values[0] - proxy0) <= _T0_TOL * max(1.0, proxy0))

    if cfg.data_kind == "generic":
        if values[0] < 1e-12 * max(scale, 1.0):
            raise ConvergenceError("layer amplitude below noise floor")
        mask = taus >= tau_fit_min
        fit = rate_fit(taus[mask], values[mask])
        report.fits["layer_exponent"] = fit.as_dict()
        report.flags["layer_exponent"] = bool(
            abs(fit.exponent + 1.0) <= _TOL_LAYER)
    else:
        amp = float(values.max())
        bulk_ref = float(bulk.max())
        report.metadata["amplitude_max"] = amp
        report.metadata["bulk_reference"] = bulk_ref
        report.flags["wp_amplitude_small"] = bool(amp <= 10.0 * bulk_ref)
    return report


# ---------------------------------------------------------------------------
# second-order experiment
# ---------------------------------------------------------------------------

def corrector_shapes(cm: CollisionMatrices, f_shape: np.ndarray,
                     g_shape: np.ndarray):
    """Macroscopic correctors driven by purely microscopic data.

    For the kinetic-only system: the macroscopic image of transport applied
    to the inverted collision operator.  For the electromagnetic system: the
    induced charge and field data, compatible by construction.  Shapes carry
    no radial factor; the mode versions multiply by i*s and the profile.
    """
    basis = cm.basis
    p0m = basis.projection_matrix("P0")
    v1 = v1_full(basis)
    chi0 = basis.chi(0)

    if np.linalg.norm(p0m @ f_shape) > 1e-10 * np.linalg.norm(f_shape):
        raise ConvergenceError("kinetic corrector needs purely microscopic data")
    w = np.linalg.solve(cm.L_full() - p0m, f_shape)
    z2 = p0m @ (v1 @ w)

    if abs(g_shape @ chi0) > 1e-10 * np.linalg.norm(g_shape):
        raise ConvergenceError("field corrector needs data with no density part")
    w1 = np.linalg.solve(cm.L1_full() - np.outer(chi0, chi0), g_shape)
    e_z = np.array([w1 @ basis.chi(1), w1 @ basis.chi(2), w1 @ basis.chi(3)])
    return z2, e_z


def second_order_experiment(cfg: ExperimentConfig,
                            cm: CollisionMatrices) -> ConvergenceReport:
    """Scaled kinetic flows against the corrector-driven fluid flows.

    Initial data is purely microscopic (zero fields on the electromagnetic
    side), so the unscaled solutions vanish to first order and the
    1/eps-scaled errors against the heat and damped-Maxwell flows started
    from the correctors measure the next order.  The supremum windows start
    at t = 0.5, past the collisional transient for every eps in the sweep;
    boundedness of the scaled solution at t ~ eps^2 log(1/eps) is recorded.
    """
    tc = transport_coefficients(cm)
    basis = cm.basis
    data = make_initial_data("second_order", cfg, cm)
    t_grid = cfg.t_grid()
    times = np.concatenate([[0.0], t_grid])
    eps_arr = np.asarray(cfg.eps_list)
    dimk = basis.dim

    z2, e_z = corrector_shapes(cm, data.boltzmann_micro, data.vmb_micro)
    hs = np.array(_heat_basis(basis))
    heat_rates = np.array([tc.a_list[0], tc.a_list[2], tc.a_list[3]])
    z2_heat = hs @ z2

    streams = {name: [] for name in ("vmb", "boltzmann_perp", "boltzmann_par_proxy")}
    bounded = {"boltzmann": [], "vmb": []}
    failures: list = []
    chi = [basis.chi(j) for j in range(5)]
    ht1 = math.sqrt(0.6) * chi[0] + math.sqrt(0.4) * chi[4]

    for eps in cfg.eps_list:
        s, w = cfg.s_grid(eps)
        wq = _agg_weights(cfg, s, w)
        wl = w * s**2
        t_mark = 10.0 * eps**2 * math.log(1.0 / eps)
        times_all = np.concatenate([times, [t_mark]])
        prof = _eval_profile(data.profile_micro, data.width, s)

        f0 = data.boltzmann_states(s)
        v0 = data.vmb_states(s)
        kin_b, keep_b = _evolve_grid(assemble_B, s, eps, cm, f0, times_all, failures)
        kin_v, keep_v = _evolve_grid(assemble_A_tilde, s, eps, cm, v0, times_all, failures)
        wq_b, wq_v = wq * keep_b, wq * keep_v
        wl_b = wl * keep_b

        errs = {name: np.zeros(len(times)) for name in streams}
        for jt, t in enumerate(times):
            decay = np.exp(-np.outer(s**2 * t, heat_rates))
            fluid_b = ((1j * s * prof)[:, None] * ((z2_heat[None, :] * decay) @ hs))
            kb = kin_b[jt] / eps
            par1 = kb @ chi[1]
            parh = kb @ ht1
            perp = kb - np.outer(par1, chi[1]) - np.outer(parh, ht1)
            diff = perp - fluid_b
            errs["boltzmann_perp"][jt] = math.sqrt(wq_b @ np.sum(np.abs(diff) ** 2, axis=1))
            errs["boltzmann_par_proxy"][jt] = float(
                wl_b @ np.sqrt(np.abs(par1) ** 2 + np.abs(parh) ** 2))

            kv = kin_v[jt] / eps
            fl = np.zeros_like(kv)
            for i, sv in enumerate(s):
                if not keep_v[i]:
                    continue
                rho_z = 1j * sv * prof[i] * e_z[0]
                st = Y2_mode(float(t), float(sv), rho_z, prof[i] * e_z,
                             np.zeros(3, dtype=complex), tc)
                fl[i, 0] = st.coefficients[0]
                fl[i, dimk:] = st.coefficients[1:]
            dvt = kv - fl
            gsq = np.sum(np.abs(dvt) ** 2, axis=1) + (1.0 / s**2) * np.abs(dvt[:, 0]) ** 2
            errs["vmb"][jt] = math.sqrt(wq_v @ gsq)
        for name in streams:
            streams[name].append(errs[name].tolist())

        kb_mark = kin_b[-1] / eps
        kv_mark = kin_v[-1] / eps
        bounded["boltzmann"].append(float(np.sqrt(
            wq_b @ np.sum(np.abs(kb_mark) ** 2, axis=1))))
        gsq = np.sum(np.abs(kv_mark) ** 2, axis=1) + (1.0 / s**2) * np.abs(kv_mark[:, 0]) ** 2
        bounded["vmb"].append(float(np.sqrt(wq_v @ gsq)))

    report = ConvergenceReport(
        experiment="second_order",
        config=cfg.as_dict(),
        eps=list(cfg.eps_list),
        t=times.tolist(),
        errors={k: v for k, v in streams.items()},
    )
    report.metadata = _environment_metadata(cm, cfg)
    report.metadata["propagation_failures"] = failures
    report.metadata["scaled_norm_at_log_time"] = bounded
    total = 2 * cfg.n_s * len(cfg.eps_list)
    report.metadata["coverage"] = 1.0 - len(failures) / total

    for tag, power in (("boltzmann", 1.75), ("vmb", 0.75)):
        key = "boltzmann_perp" if tag == "boltzmann" else "vmb"
        table = np.array(streams[key])
        y = np.array([_sup_weighted(times, row, power, t_floor=0.5)
                      for row in table])
        fits, best = _compensated_slopes(eps_arr, y)
        for comp, f in fits.items():
            name = f"eps_slope_{tag}" if comp == "raw" else f"eps_slope_{tag}_{comp}"
            report.fits[name] = f.as_dict()
        report.metadata[f"best_compensator_{tag}"] = best
        report.flags[f"eps_slope_{tag}"] = bool(
            abs(fits["raw"].exponent - 1.0) <= _TOL_SECOND_SLOPE)
        marks = np.array(bounded[tag])
        growth = rate_fit(eps_arr, marks).exponent if np.all(marks > 0) else 0.0
        report.fits[f"log_time_growth_{tag}"] = {"exponent": float(growth)}
        report.flags[f"bounded_{tag}"] = bool(abs(growth) <= 0.3)
    return report


# ---------------------------------------------------------------------------
# oscillatory integral decay
# ---------------------------------------------------------------------------

def _default_envelope(s):
    return (1.0 + s) ** -4


def _filon_moment(kappa: float, phi: Callable, m: int, r_cut: float,
                  order: int, width_cap: float) -> complex:
    """Panelled Gauss quadrature of the radial half-line phase integral."""
    width = min(width_cap, 8.0 / max(abs(kappa), 1.0))
    n_panels = max(int(math.ceil(r_cut / width)), 4)
    edges = np.linspace(0.0, r_cut, n_panels + 1)
    x, w = np.polynomial.legendre.leggauss(order)
    half = 0.5 * (edges[1] - edges[0])
    nodes = (edges[:-1, None] + half) + half * x[None, :]
    weights = half * w[None, :]
    vals = np.exp(1j * kappa * nodes) * phi(nodes) * nodes**m
    return complex(np.sum(weights * vals))


def _radial_phase_integral(kappa: float, phi: Callable, m: int,
                           r_cut: float) -> complex:
    coarse = _filon_moment(kappa, phi, m, r_cut, 10, 1.0)
    fine = _filon_moment(kappa, phi, m, r_cut, 21, 0.5)
    scale = max(abs(fine), 1e-300)
    if abs(fine - coarse) > 1e-7 * scale + 1e-13:
        finest = _filon_moment(kappa, phi, m, r_cut, 32, 0.25)
        if abs(finest - fine) > 1e-6 * max(abs(finest), 1e-300) + 1e-13:
            raise ConvergenceError(
                f"oscillatory quadrature did not converge at phase {kappa:.3e}"
            )
        return finest
    return fine


def oscillatory_value(theta: float, x: float, phi: Callable | None = None,
                      r_cut: float = 120.0) -> complex:
    """The radial wave integral at front offset |x|, via exact sphere kernels."""
    phi = _default_envelope if phi is None else phi
    if x < 1e-12:
        return 4.0 * math.pi * _radial_phase_integral(theta, phi, 2, r_cut)
    k_plus = _radial_phase_integral(theta + x, phi, 1, r_cut)
    k_minus = _radial_phase_integral(theta - x, phi, 1, r_cut)
    return (2.0 * math.pi / (1j * x)) * (k_plus - k_minus)


def mc_reference(theta: float, x: float, n: int = 10_000_000,
                 seed: int = 20230823):
    """Monte Carlo value of the wave integral for the default envelope.

    Radial importance sampling with the exact inverse distribution of the
    density proportional to s^2 (1+s)^{-4}; the sphere average is analytic.
    Returns (value, sigma) with sigma the componentwise standard error.
    """
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    v = np.cbrt(u)
    r = v / (1.0 - v)
    total = 4.0 * math.pi / 3.0
    samples = np.sinc(r * x / math.pi) * np.exp(1j * theta * r)
    value = total * complex(samples.mean())
    sigma = total * max(samples.real.std(), samples.imag.std()) / math.sqrt(n)
    return value, float(sigma)


def oscillatory_decay_check(phi: Callable | None = None,
                            thetas: np.ndarray | None = None,
                            x_ratios: tuple = (0.0, 0.5, 1.0),
                            r_cut: float = 120.0) -> ConvergenceReport:
    """Stationary-phase decay of the radial wave integral.

    Evaluates the integral at front offsets proportional to the phase time
    and fits the decay of the largest sample; the wavefront value dominates
    and decays with exponent -1.  The envelope decay needed for absolute
    convergence is checked numerically, not assumed.
    """
    phi = _default_envelope if phi is None else phi
    thetas = np.geomspace(10.0, 1000.0, 13) if thetas is None else np.asarray(thetas, float)

    probe = np.geomspace(4.0, 64.0, 5)
    mass = phi(probe) * probe**3
    if not np.all(np.isfinite(mass)) or mass[-1] > 0.5 * mass[0]:
        raise ConvergenceError(
            "amplitude envelope does not decay fast enough for an absolutely "
            "convergent wave integral"
        )

    per_ratio = {r: np.zeros(len(thetas)) for r in x_ratios}
    max_vals = np.zeros(len(thetas))
    for i, theta in enumerate(thetas):
        vals = [abs(oscillatory_value(float(theta), float(r * theta), phi, r_cut))
                for r in x_ratios]
        for r, v in zip(x_ratios, vals):
            per_ratio[r][i] = v
        max_vals[i] = max(vals)

    i0 = oscillatory_value(0.0, 0.0, phi, r_cut)
    fit = rate_fit(thetas, max_vals)

    errors = {"osc_max": max_vals.tolist()}
    for r in x_ratios:
        errors[f"osc_x{r:g}"] = per_ratio[r].tolist()
    report = ConvergenceReport(
        experiment="oscillatory",
        config={"x_ratios": list(x_ratios), "r_cut": r_cut,
                "thetas": [float(t) for t in thetas]},
        eps=[],
        t=[float(t) for t in thetas],
        errors=errors,
    )
    report.fits["oscillatory_exponent"] = fit.as_dict()
    report.flags["oscillatory_exponent"] = bool(abs(fit.exponent + 1.0) <= _TOL_OSC)
    report.metadata["static_value"] = {"re": i0.real, "im": i0.imag}
    tail = phi(r_cut) * r_cut**3
    report.metadata["tail_bound"] = float(tail)
    return report
