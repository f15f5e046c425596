"""Per-mode generators for the kinetic and kinetic-electromagnetic systems.

With the wave vector rotated onto the first axis, one Fourier mode carries a
kinetic state (axial sector plus a cosine and a sine transverse copy) and, in
the electromagnetic case, the four transverse field components.  Everything
here is a dense complex matrix: assembly, the weighted inner product, the
semigroup (in diffusive time t / eps^2), its split into fluid branches, an
oscillatory high-frequency part and an exponentially damped remainder, and a
grid-based probe for the norm of gain-times-resolvent compositions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm, schur, solve_sylvester

from .collision_ops import CollisionMatrices, _nu_of_r, _pair_kernel_moments
from .velocity_basis import SECTOR_AXIAL, SECTOR_TRANSVERSE, v_multiplication_matrix

KIND_BOLTZMANN = "boltzmann"
KIND_VMB = "vmb"

_EIG_COND_LIMIT = 1e8


class PropagationError(RuntimeError):
    """Raised when the matrix exponential fails its contraction guard."""


@dataclass
class ModeOperator:
    kind: str
    s: float
    eps: float
    matrix: np.ndarray
    metric_diag: np.ndarray
    dim0: int
    dim1: int
    collision: CollisionMatrices
    _decomp: tuple | None = field(default=None, repr=False, compare=False)
    _prop_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_field(self) -> int:
        return 4 if self.kind == KIND_VMB else 0

    def weighted_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(np.real(np.vdot(u, self.metric_diag * u))))

    def weighted_inner(self, u: np.ndarray, w: np.ndarray) -> complex:
        return complex(np.vdot(w, self.metric_diag * u))


def assemble_B(s: float, eps: float, cm: CollisionMatrices) -> ModeOperator:
    """Kinetic-only mode generator L - i*eps*s*(v along the wave axis)."""
    if s < 0:
        raise ValueError("s must be nonnegative")
    basis = cm.basis
    w = eps * s
    mat = cm.L_full().astype(complex)
    v0 = v_multiplication_matrix(basis, SECTOR_AXIAL)
    v1 = v_multiplication_matrix(basis, SECTOR_TRANSVERSE)
    mat[basis.slice_axial, basis.slice_axial] -= 1j * w * v0
    mat[basis.slice_cos, basis.slice_cos] -= 1j * w * v1
    mat[basis.slice_sin, basis.slice_sin] -= 1j * w * v1
    return ModeOperator(
        kind=KIND_BOLTZMANN,
        s=s,
        eps=eps,
        matrix=mat,
        metric_diag=np.ones(basis.dim),
        dim0=basis.dim0,
        dim1=basis.dim1,
        collision=cm,
    )


def _vmb_blocks(s: float, eps: float, cm: CollisionMatrices, sign_flip: bool):
    """Shared assembly of the electromagnetic mode generator and its adjoint.

    sign_flip=False gives the generator; True flips every coupling term while
    keeping the collision blocks, which is the metric adjoint (the rank-one
    metric corrections in the axial block cancel exactly).
    """
    basis = cm.basis
    n0, n1 = basis.dim0, basis.dim1
    dim = n0 + 2 * n1 + 4
    ax = slice(0, n0)
    co = slice(n0, n0 + n1)
    si = slice(n0 + n1, n0 + 2 * n1)
    ix2, ix3, iy2, iy3 = (n0 + 2 * n1 + k for k in range(4))
    sk = -1.0 if sign_flip else 1.0

    v0 = v_multiplication_matrix(basis, SECTOR_AXIAL)
    v1 = v_multiplication_matrix(basis, SECTOR_TRANSVERSE)
    chi0 = np.zeros(n0)
    chi0[0] = 1.0
    chi1 = v0 @ chi0
    chi2 = np.zeros(n1)
    chi2[0] = 1.0

    mat = np.zeros((dim, dim), dtype=complex)
    mat[ax, ax] = cm.L1_sector[SECTOR_AXIAL] - sk * 1j * eps * s * v0
    mat[ax, ax] -= sk * 1j * (eps / s) * np.outer(chi1, chi0)
    mat[co, co] = cm.L1_sector[SECTOR_TRANSVERSE] - sk * 1j * eps * s * v1
    mat[si, si] = mat[co, co]

    mat[co, ix3] = sk * eps * chi2
    mat[ix3, n0:n0 + n1] = -sk * eps * chi2
    mat[ix3, iy2] = sk * 1j * eps**2 * s
    mat[iy2, ix3] = sk * 1j * eps**2 * s

    mat[si, ix2] = -sk * eps * chi2
    mat[ix2, n0 + n1:n0 + 2 * n1] = sk * eps * chi2
    mat[ix2, iy3] = -sk * 1j * eps**2 * s
    mat[iy3, ix2] = -sk * 1j * eps**2 * s

    metric = np.ones(dim)
    metric[0] = 1.0 + 1.0 / s**2
    return mat, metric, n0, n1


def assemble_A_tilde(s: float, eps: float, cm: CollisionMatrices) -> ModeOperator:
    """Electromagnetic mode generator on (kinetic, E-transverse, B-transverse)."""
    if s <= 0:
        raise ValueError("s must be positive for the electromagnetic operator")
    mat, metric, n0, n1 = _vmb_blocks(s, eps, cm, sign_flip=False)
    return ModeOperator(
        kind=KIND_VMB,
        s=s,
        eps=eps,
        matrix=mat,
        metric_diag=metric,
        dim0=n0,
        dim1=n1,
        collision=cm,
    )


def assemble_A_tilde_star(s: float, eps: float, cm: CollisionMatrices) -> ModeOperator:
    """Explicitly assembled metric adjoint of the electromagnetic generator."""
    if s <= 0:
        raise ValueError("s must be positive for the electromagnetic operator")
    mat, metric, n0, n1 = _vmb_blocks(s, eps, cm, sign_flip=True)
    return ModeOperator(
        kind=KIND_VMB,
        s=s,
        eps=eps,
        matrix=mat,
        metric_diag=metric,
        dim0=n0,
        dim1=n1,
        collision=cm,
    )


def metric_adjoint(op: ModeOperator) -> np.ndarray:
    """Dense G^{-1} A^H G for the operator's weighted inner product."""
    g = op.metric_diag
    return (op.matrix.conj().T * g[None, :]) / g[:, None]


# ---------------------------------------------------------------------------
# semigroup
# ---------------------------------------------------------------------------

def _decomposition(op: ModeOperator):
    if op._decomp is None:
        lam, vr = np.linalg.eig(op.matrix)
        order = np.lexsort((lam.imag, -lam.real))
        lam, vr = lam[order], vr[:, order]
        cond = np.linalg.cond(vr)
        if cond < _EIG_COND_LIMIT:
            op._decomp = ("eig", lam, vr, np.linalg.inv(vr), cond)
        else:
            t, z = schur(op.matrix, output="complex")
            op._decomp = ("schur", t, z, None, cond)
    return op._decomp


def eigen_condition(op: ModeOperator) -> float:
    return _decomposition(op)[4]


def spectrum(op: ModeOperator):
    """Eigenvalues sorted by descending real part, vectors, and residuals."""
    dec = _decomposition(op)
    if dec[0] == "eig":
        lam, vr = dec[1], dec[2]
    else:
        lam, vr = np.linalg.eig(op.matrix)
        order = np.lexsort((lam.imag, -lam.real))
        lam, vr = lam[order], vr[:, order]
    res = np.linalg.norm(op.matrix @ vr - vr * lam[None, :], axis=0)
    res /= np.linalg.norm(vr, axis=0)
    return lam, vr, res


def propagator_matrix(op: ModeOperator, t: float) -> np.ndarray:
    """Dense e^{(t/eps^2) A}."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    if t in op._prop_cache:
        return op._prop_cache[t]
    tau = t / op.eps**2
    dec = _decomposition(op)
    if dec[0] == "eig":
        _, lam, vr, vinv, _ = dec
        out = (vr * np.exp(tau * lam)[None, :]) @ vinv
    else:
        _, tmat, z, _, _ = dec
        out = z @ expm(tau * tmat) @ z.conj().T
    if len(op._prop_cache) < 64:
        op._prop_cache[t] = out
    return out


def propagate(op: ModeOperator, u0: np.ndarray, t: float) -> np.ndarray:
    u0 = np.asarray(u0, dtype=complex)
    if u0.shape != (op.dim,):
        raise ValueError(f"state length {u0.shape} does not match operator dim {op.dim}")
    out = propagator_matrix(op, t) @ u0
    n0, n1 = op.weighted_norm(u0), op.weighted_norm(out)
    if n1 > n0 * (1.0 + 1e-6) + 1e-12:
        raise PropagationError(
            f"contraction violated: growth {n1 / max(n0, 1e-300):.3e} "
            f"(decomposition condition {eigen_condition(op):.3e})"
        )
    return out


# ---------------------------------------------------------------------------
# fluid / oscillatory / remainder split
# ---------------------------------------------------------------------------

@dataclass
class SemigroupSplit:
    op: ModeOperator
    regime: str                       # low | high | mid
    eigen_projections: list           # (eigenvalue, right, left) triples
    S1_part: np.ndarray               # projection onto the fluid branches
    S2_part: np.ndarray               # projection onto oscillatory branches
    S3_part: np.ndarray               # remainder projection
    measured_gap_b: float
    fit_C: float
    defective: bool
    eig_cond: float

    def parts_at(self, t: float):
        prop = propagator_matrix(self.op, t)
        return prop @ self.S1_part, prop @ self.S2_part, prop @ self.S3_part


def _weighted_opnorm(op: ModeOperator, mat: np.ndarray) -> float:
    gh = np.sqrt(op.metric_diag)
    return float(np.linalg.norm((mat * (1.0 / gh)[None, :]) * gh[:, None], ord=2))


def _schur_projector(a: np.ndarray, select) -> tuple[np.ndarray, int]:
    t, z, k = schur(a, output="complex", sort=select)
    if k == 0:
        return np.zeros_like(a), 0
    if k == a.shape[0]:
        return np.eye(a.shape[0], dtype=complex), k
    t11, t12, t22 = t[:k, :k], t[:k, k:], t[k:, k:]
    x = solve_sylvester(t11, -t22, t12)
    ptil = np.zeros_like(a)
    ptil[:k, :k] = np.eye(k)
    ptil[:k, k:] = x
    return z @ ptil @ z.conj().T, k


def split_regime(op: ModeOperator, r0: float, r1: float) -> str:
    load = op.eps * (1.0 + op.s) if op.kind == KIND_VMB else op.eps * op.s
    if load <= r0:
        return "low"
    if op.kind == KIND_VMB and op.eps * op.s >= r1:
        return "high"
    return "mid"


def semigroup_split(op: ModeOperator, r0: float = 0.1, r1: float = 10.0,
                    n_fluid: int = 5) -> SemigroupSplit:
    regime = split_regime(op, r0, r1)
    dim = op.dim
    eye = np.eye(dim, dtype=complex)
    cond = eigen_condition(op)
    defective = cond >= _EIG_COND_LIMIT

    s1 = np.zeros_like(eye)
    s2 = np.zeros_like(eye)
    projections = []

    if regime == "low":
        if not defective:
            _, lam, vr, vinv, _ = _decomposition(op)
            for j in range(n_fluid):
                right = vr[:, j]
                left = vinv[j].conj() / op.metric_diag
                projections.append((lam[j], right, left))
                s1 += np.outer(right, vinv[j])
        else:
            lam_all = np.linalg.eigvals(op.matrix)
            cut = np.sort(lam_all.real)[-n_fluid] - 1e-12
            s1, _ = _schur_projector(op.matrix, lambda z: z.real >= cut)
    elif regime == "high":
        thresh = -0.5 * op.collision.mu_estimate
        if not defective:
            _, lam, vr, vinv, _ = _decomposition(op)
            for j in range(dim):
                if lam[j].real >= thresh:
                    projections.append((lam[j], vr[:, j], vinv[j].conj() / op.metric_diag))
                    s2 += np.outer(vr[:, j], vinv[j])
        else:
            s2, _ = _schur_projector(op.matrix, lambda z: z.real >= thresh)

    s3 = eye - s1 - s2
    b, c_fit = _fit_remainder_decay(op, s3, s1, s2)
    return SemigroupSplit(
        op=op,
        regime=regime,
        eigen_projections=projections,
        S1_part=s1,
        S2_part=s2,
        S3_part=s3,
        measured_gap_b=b,
        fit_C=c_fit,
        defective=defective,
        eig_cond=cond,
    )


def _fit_remainder_decay(op: ModeOperator, s3, s1, s2) -> tuple[float, float]:
    """Fit ||S3(t)||_xi ~ C e^{-b t/eps^2} on a window set by the gap."""
    lam_all = np.linalg.eigvals(op.matrix)
    active = np.ones(lam_all.size, bool)
    # exclude branch eigenvalues captured by S1/S2 from the gap estimate
    rank12 = int(round(np.real(np.trace(s1 + s2))))
    if rank12 > 0:
        order = np.argsort(-lam_all.real)
        active[order[:rank12]] = False
    if not active.any():
        return float("nan"), float("nan")
    # decay rate per unit of diffusive time t/eps^2 is -Re(lambda) of the matrix
    gap = max(-lam_all.real[active].max(), 1e-12)
    taus = np.linspace(1.0 / gap, 18.0 / gap, 10)
    norms = []
    for tau in taus:
        prop = propagator_matrix(op, tau * op.eps**2)
        norms.append(_weighted_opnorm(op, prop @ s3))
    norms = np.asarray(norms)
    good = norms > 1e-13
    if good.sum() < 3:
        return float("nan"), float("nan")
    coeff = np.polyfit(taus[good], np.log(norms[good]), 1)
    return float(-coeff[0]), float(math.exp(coeff[1]))


# ---------------------------------------------------------------------------
# resolvent probe on a dedicated product grid
# ---------------------------------------------------------------------------

_probe_cache: dict = {}


def _probe_grid(n_r: int, n_c: int, lmax: int, r_max: float):
    key = (n_r, n_c, lmax, r_max)
    if key in _probe_cache:
        return _probe_cache[key]
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    r = 0.5 * r_max * (xg + 1.0)
    wr2 = 0.5 * r_max * wg * r**2
    c, wc = np.polynomial.legendre.leggauss(n_c)
    phi = np.empty((lmax + 1, n_c))
    p_prev = np.ones_like(c)
    p_cur = c.copy()
    for l in range(lmax + 1):
        if l == 0:
            pl = p_prev
        elif l == 1:
            pl = p_cur
        else:
            p_next = ((2 * l - 1) * c * p_cur - (l - 1) * p_prev) / l
            p_prev, p_cur = p_cur, p_next
            pl = p_cur
        phi[l] = math.sqrt((2 * l + 1) / 2.0) * pl
    pc = phi * np.sqrt(wc)[None, :]

    ii, jj = np.meshgrid(np.arange(n_r), np.arange(n_r), indexing="ij")
    k1p, _ = _pair_kernel_moments(r[ii.ravel()], r[jj.ravel()], lmax, 16, 8)
    sw = np.sqrt(wr2)
    tables = []
    for l in range(lmax + 1):
        # one-sided gain: half the full gain kernel (see collision assembly)
        tables.append(0.5 * k1p[l].reshape(n_r, n_r) * np.outer(sw, sw))
    out = (r, wr2, c, wc, pc, tables)
    _probe_cache[key] = out
    return out


def resolvent_norm_probe(op: ModeOperator, lam: complex, n_r: int = 96,
                         n_c: int = 80, lmax: int = 48, r_max: float = 24.0,
                         iters: int = 120) -> float:
    """Operator norm of (one-sided gain) o (lam - streaming part)^{-1}.

    The streaming part is multiplication by -nu(v) - i*(eps*s)*v1; the grid is
    an (r, angle-cosine) product rule fine enough to resolve the resonant set,
    independent of the Galerkin basis.
    """
    r, wr2, c, wc, pc, tables = _probe_grid(n_r, n_c, lmax, r_max)
    w = op.eps * op.s
    denom = lam + _nu_of_r(r)[:, None] + 1j * w * r[:, None] * c[None, :]
    if np.min(np.abs(denom)) < 1e-10:
        raise ValueError(f"lambda {lam} is numerically on the streaming spectrum")
    inv = 1.0 / denom

    def forward(x):
        g = (x * inv) @ pc.T
        h = np.empty_like(g)
        for l in range(lmax + 1):
            h[:, l] = tables[l] @ g[:, l]
        return h @ pc

    def backward(y):
        g = y @ pc.T
        h = np.empty_like(g)
        for l in range(lmax + 1):
            h[:, l] = tables[l] @ g[:, l]
        return (h @ pc) * np.conj(inv)

    x = np.full((n_r, n_c), 1.0 + 0.1j, dtype=complex)
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        y = forward(x)
        new_sigma = np.linalg.norm(y)
        x = backward(y)
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        x /= nx
        if abs(new_sigma - sigma) < 1e-10 * max(new_sigma, 1e-300):
            sigma = new_sigma
            break
        sigma = new_sigma
    return float(sigma)
