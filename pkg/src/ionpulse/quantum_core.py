"""Three-level density-matrix evolution under a train of short laser pulses.

States are ordered ``|1> = 4S1/2``, ``|2> = 4P3/2``, ``|3> = 3D5/2``; index 0,
1, 2 in every array. Density matrices are plain ``(3, 3)`` complex arrays (or
stacks of them with leading batch axes). Times are in ns, detunings in rad/ns.

One pulse period is modelled as an instantaneous rotation on the 1-2
transition, a free z-rotation over the period, and a two-operator Kraus map for
spontaneous decay of ``|2>``. After the last pulse the excited state is allowed
to decay completely.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import InvalidDecay

TWO_PI = 2.0 * math.pi

#: 4P3/2 lifetime in ns.
P32_LIFETIME_NS = 6.924
#: Branching probability 4P3/2 -> 3D5/2.
P52_BRANCHING = 0.0587

# flattened (row-major) index of rho[1, 1]
_IDX22 = 4


@dataclass(frozen=True)
class AtomModel:
    """Decay constants of the excited state.

    ``gamma_total`` is in 1/ns. A value of 0 switches decay off during the
    train (the final complete decay still branches with ``p52``).

    ``decay_model`` selects the per-period branch probabilities:

    ``"exact"``
        survival exp(-gamma tau), decayed population split (1 - p52) : p52.
        In-train decay then branches exactly like the final complete decay.
    ``"per_channel"``
        p = 1 - exp(-gamma_PS tau), q = 1 - exp(-gamma_PD tau), survival
        1 - p - q. Differs from ``"exact"`` at order (gamma tau)^2 and becomes
        unphysical for long periods.
    """

    gamma_total: float = 1.0 / P32_LIFETIME_NS
    p52: float = P52_BRANCHING
    decay_model: str = "exact"

    def __post_init__(self):
        if self.decay_model not in ("exact", "per_channel"):
            raise ValueError(f"unknown decay_model {self.decay_model!r}")
        if not self.gamma_total >= 0.0:
            raise ValueError(f"gamma_total must be >= 0, got {self.gamma_total}")
        if not 0.0 < self.p52 < 1.0:
            raise ValueError(f"p52 must lie in (0, 1), got {self.p52}")

    @property
    def gamma_PS(self) -> float:
        return (1.0 - self.p52) * self.gamma_total

    @property
    def gamma_PD(self) -> float:
        return self.p52 * self.gamma_total


@dataclass(frozen=True)
class TrainParams:
    """Per-pulse parameters of a pulse train.

    Angles in rad, ``delta``/``delta_prime`` in rad/ns, ``tau_pulse`` in ns.
    ``theta_first=None`` means the first pulse is identical to the others.
    """

    theta: float
    tau_pulse: float
    delta: float = 0.0
    delta_prime: float = 0.0
    theta_first: float | None = None
    dphi_first: float = 0.0

    def __post_init__(self):
        if not self.tau_pulse > 0.0:
            raise ValueError(f"tau_pulse must be > 0, got {self.tau_pulse}")
        if self.theta_first is None:
            object.__setattr__(self, "theta_first", self.theta)
        for name in ("theta", "theta_first", "dphi_first"):
            value = getattr(self, name)
            if not 0.0 <= value < TWO_PI:
                raise ValueError(f"{name} must lie in [0, 2pi), got {value}")

    @classmethod
    def from_rep_rate(cls, theta, rep_rate_ghz, **kwargs) -> "TrainParams":
        return cls(theta=theta, tau_pulse=1.0 / rep_rate_ghz, **kwargs)

    @property
    def rep_rate_ghz(self) -> float:
        return 1.0 / self.tau_pulse

    @property
    def has_anomaly(self) -> bool:
        return self.theta_first != self.theta or self.dphi_first != 0.0


class Observables(NamedTuple):
    P1: float
    P2: float
    P3: float
    c13: complex


# --------------------------------------------------------------------------
# states
# --------------------------------------------------------------------------

def ket(k: int) -> np.ndarray:
    """Basis ket ``|k>`` for k in {1, 2, 3}."""
    v = np.zeros(3, dtype=complex)
    v[k - 1] = 1.0
    return v


def projector(k: int) -> np.ndarray:
    v = ket(k)
    return np.outer(v, v.conj())


def pure(psi) -> np.ndarray:
    """Density matrix of a (normalised) state vector."""
    psi = np.asarray(psi, dtype=complex)
    psi = psi / np.linalg.norm(psi)
    return np.outer(psi, psi.conj())


def check_density_matrix(rho, atol: float = 1e-10) -> None:
    """Raise ``ValueError`` unless ``rho`` is Hermitian, unit trace and PSD."""
    rho = np.asarray(rho)
    if rho.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=1e-12, rtol=0):
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > atol:
        raise ValueError(f"density matrix trace {np.trace(rho).real} != 1")
    if np.linalg.eigvalsh(rho).min() < -atol:
        raise ValueError("density matrix is not positive semidefinite")


def _hygiene(rho: np.ndarray) -> np.ndarray:
    rho = 0.5 * (rho + np.swapaxes(rho, -1, -2).conj())
    tr = np.trace(rho, axis1=-2, axis2=-1).real
    return rho / np.asarray(tr)[..., None, None]


# --------------------------------------------------------------------------
# single-period operators
# --------------------------------------------------------------------------

def rotation_unitary(theta, phi=0.0) -> np.ndarray:
    """exp((i/2) theta (cos phi sx + sin phi sy)) on the 1-2 pair.

    Broadcasts over array-valued ``theta`` and ``phi``; the result has shape
    ``broadcast(theta, phi).shape + (3, 3)``.
    """
    theta, phi = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    c = np.cos(0.5 * theta)
    s = np.sin(0.5 * theta)
    u = np.zeros(theta.shape + (3, 3), dtype=complex)
    u[..., 0, 0] = c
    u[..., 1, 1] = c
    u[..., 0, 1] = 1j * s * np.exp(-1j * phi)
    u[..., 1, 0] = 1j * s * np.exp(1j * phi)
    u[..., 2, 2] = 1.0
    return u


def z_rotation_unitary(delta, delta_prime, tau_pulse) -> np.ndarray:
    """Diagonal free-evolution unitary over one pulse period.

    exp((i/2) [delta (|1><1| - |2><2|) + delta' (|1><1| - |3><3|)] tau).
    """
    tau_pulse = np.asarray(tau_pulse, float)
    if np.any(tau_pulse <= 0):
        raise ValueError("tau_pulse must be > 0")
    delta, delta_prime, tau_pulse = np.broadcast_arrays(
        np.asarray(delta, float), np.asarray(delta_prime, float), tau_pulse)
    a = 0.5 * delta * tau_pulse
    b = 0.5 * delta_prime * tau_pulse
    u = np.zeros(delta.shape + (3, 3), dtype=complex)
    u[..., 0, 0] = np.exp(1j * (a + b))
    u[..., 1, 1] = np.exp(-1j * a)
    u[..., 2, 2] = np.exp(-1j * b)
    return u


def decay_probabilities(atom: AtomModel, tau_pulse: float) -> tuple[float, float]:
    """Branch probabilities ``p`` (to |1>) and ``q`` (to |3>) over one period."""
    if atom.decay_model == "exact":
        decayed = -math.expm1(-atom.gamma_total * tau_pulse)
        return (1.0 - atom.p52) * decayed, atom.p52 * decayed
    p = -math.expm1(-atom.gamma_PS * tau_pulse)
    q = -math.expm1(-atom.gamma_PD * tau_pulse)
    return p, q


def _survival(atom: AtomModel, tau_pulse: float) -> float:
    # 1 - p - q, evaluated without cancellation
    if atom.decay_model == "exact":
        return math.exp(-atom.gamma_total * tau_pulse)
    s = math.exp(-atom.gamma_PS * tau_pulse) + math.exp(-atom.gamma_PD * tau_pulse) - 1.0
    if s < 0.0:
        raise InvalidDecay(
            f"1 - p - q = {s:.3g} < 0: period {tau_pulse} ns is too long for the "
            "two-operator decay map")
    return s


def decay_kraus(atom: AtomModel, tau_pulse: float) -> tuple[np.ndarray, np.ndarray]:
    """Kraus pair (N, D) for spontaneous decay of |2> during one period.

    N = |1><1| + sqrt(1-p-q) |2><2| + |3><3|,  D = sqrt(p) |1><2| + sqrt(q) |3><2|.
    """
    if tau_pulse < 0:
        raise ValueError("tau_pulse must be >= 0")
    p, q = decay_probabilities(atom, tau_pulse)
    s = _survival(atom, tau_pulse)
    n_op = np.diag([1.0, math.sqrt(s), 1.0]).astype(complex)
    d_op = np.zeros((3, 3), dtype=complex)
    d_op[0, 1] = math.sqrt(p)
    d_op[2, 1] = math.sqrt(q)
    return n_op, d_op


def _apply_decay(rho: np.ndarray, atom: AtomModel, tau_pulse: float) -> np.ndarray:
    p, q = decay_probabilities(atom, tau_pulse)
    n = np.array([1.0, math.sqrt(_survival(atom, tau_pulse)), 1.0])
    d = np.array([math.sqrt(p), 0.0, math.sqrt(q)])
    return rho * np.multiply.outer(n, n) + rho[..., 1:2, 1:2] * np.multiply.outer(d, d)


def step(rho, params: TrainParams, atom: AtomModel, is_first: bool = False) -> np.ndarray:
    """Advance ``rho`` by one pulse period: pulse, free evolution, decay."""
    if is_first:
        ur = rotation_unitary(params.theta_first, params.dphi_first)
    else:
        ur = rotation_unitary(params.theta, 0.0)
    a = z_rotation_unitary(params.delta, params.delta_prime, params.tau_pulse) @ ur
    rho = a @ np.asarray(rho, dtype=complex) @ a.conj().T
    return _hygiene(_apply_decay(rho, atom, params.tau_pulse))


def complete_decay(rho, atom: AtomModel | None = None) -> np.ndarray:
    """Let all |2> population decay, branching with ``atom.p52``.

    Coherences involving |2> vanish; the 1-3 coherence is untouched.
    """
    p52 = (atom or AtomModel()).p52
    rho = np.array(rho, dtype=complex)
    p2 = rho[..., 1, 1].real.copy()
    rho[..., 1, :] = 0.0
    rho[..., :, 1] = 0.0
    rho[..., 0, 0] += (1.0 - p52) * p2
    rho[..., 2, 2] += p52 * p2
    return rho


def simulate_train(rho0, params: TrainParams, atom: AtomModel, n: int,
                   decay: bool = True) -> np.ndarray:
    """Apply ``n`` pulse periods (the first flagged) and then complete decay.

    ``decay=False`` returns the state right after the last period.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    rho = np.asarray(rho0, dtype=complex)
    for k in range(n):
        rho = step(rho, params, atom, is_first=(k == 0))
    return complete_decay(rho, atom) if decay else rho


def observables(rho) -> Observables:
    """Populations of the three levels and the coherence Tr(|1><3| rho)."""
    rho = np.asarray(rho)
    return Observables(float(rho[0, 0].real), float(rho[1, 1].real),
                       float(rho[2, 2].real), complex(rho[2, 0]))


# --------------------------------------------------------------------------
# batched propagation through superoperators
# --------------------------------------------------------------------------

def _superop(a: np.ndarray, atom: AtomModel, tau_pulse: float) -> np.ndarray:
    """Row-major 9x9 matrix of rho -> decay(a rho a^dag), batched over ``a``."""
    p, q = decay_probabilities(atom, tau_pulse)
    n = np.array([1.0, math.sqrt(_survival(atom, tau_pulse)), 1.0])
    d = np.array([math.sqrt(p), 0.0, math.sqrt(q)])
    k = np.diag(np.multiply.outer(n, n).ravel()).astype(complex)
    k[:, _IDX22] += np.multiply.outer(d, d).ravel()
    aa = np.einsum("...ij,...kl->...ikjl", a, a.conj()).reshape(a.shape[:-2] + (9, 9))
    return k @ aa


def _complete_decay_superop(p52: float) -> np.ndarray:
    c = np.eye(9, dtype=complex)
    for j in (1, 3, 4, 5, 7):        # every element in row or column 2
        c[j, j] = 0.0
    c[0, _IDX22] = 1.0 - p52
    c[8, _IDX22] = p52
    return c


def propagate_train(rho0, theta, tau_pulse: float, atom: AtomModel,
                    ns: Sequence[int], *, delta=0.0, delta_prime=0.0,
                    theta_first=None, dphi_first=0.0, decay: bool = True) -> np.ndarray:
    """States after ``n`` periods for every ``n`` in ``ns``, batched.

    The parameter arrays (``theta``, ``delta``, ``delta_prime``,
    ``theta_first``, ``dphi_first``) broadcast to a batch shape ``B``; the
    result has shape ``B + (len(ns), 3, 3)``. Mathematically identical to
    calling :func:`simulate_train` for each element, but long trains cost
    O(log n) matrix products via repeated squaring of the one-period map.
    """
    ns = [int(n) for n in ns]
    if any(n < 0 for n in ns):
        raise ValueError("pulse counts must be >= 0")
    if theta_first is None:
        theta_first = theta
    theta, theta_first, dphi_first, delta, delta_prime = np.broadcast_arrays(
        *(np.asarray(x, float) for x in (theta, theta_first, dphi_first, delta, delta_prime)))
    batch = theta.shape
    uz = z_rotation_unitary(delta, delta_prime, tau_pulse)
    s_next = _superop(uz @ rotation_unitary(theta, 0.0), atom, tau_pulse)
    s_first = _superop(uz @ rotation_unitary(theta_first, dphi_first), atom, tau_pulse)

    v0 = np.broadcast_to(np.asarray(rho0, complex).reshape(9), batch + (9,))
    v1 = np.einsum("...ij,...j->...i", s_first, v0)

    out = np.empty(batch + (len(ns), 9), dtype=complex)
    order = np.argsort(ns, kind="stable")
    powers = [s_next]
    cur_n, cur_v = 1, v1
    for idx in order:
        n = ns[idx]
        if n == 0:
            out[..., idx, :] = v0
            continue
        gap = n - cur_n
        bit = 0
        while gap:
            while len(powers) <= bit:
                powers.append(powers[-1] @ powers[-1])
            if gap & 1:
                cur_v = np.einsum("...ij,...j->...i", powers[bit], cur_v)
            gap >>= 1
            bit += 1
        cur_n = n
        out[..., idx, :] = cur_v
    if decay:
        out = out @ _complete_decay_superop(atom.p52).T
    return _hygiene(out.reshape(batch + (len(ns), 3, 3)))


# --------------------------------------------------------------------------
# quantum-jump oracle
# --------------------------------------------------------------------------

def mc_final_labels(psi0, params: TrainParams, atom: AtomModel, n: int,
                    shots: int, seed: int) -> np.ndarray:
    """Final level labels (1, 2 or 3) of ``shots`` quantum-jump trajectories.

    Each period applies the pulse and free-evolution unitaries to the state
    vector, then jumps to |1> (|3>) with probability p |c2|^2 (q |c2|^2), and
    otherwise applies the no-jump operator and renormalises. The train ends
    with complete decay of |2> and a projective readout. Independent of the
    density-matrix Kraus map; deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    psi = np.array(np.broadcast_to(np.asarray(psi0, complex), (shots, 3)))
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    p, q = decay_probabilities(atom, params.tau_pulse)
    keep = math.sqrt(_survival(atom, params.tau_pulse))
    uz = z_rotation_unitary(params.delta, params.delta_prime, params.tau_pulse)
    a_first = uz @ rotation_unitary(params.theta_first, params.dphi_first)
    a_next = uz @ rotation_unitary(params.theta, 0.0)
    for k in range(n):
        psi = psi @ (a_first if k == 0 else a_next).T
        exc = np.abs(psi[:, 1]) ** 2
        u = rng.random(shots)
        to1 = u < p * exc
        to3 = ~to1 & (u < (p + q) * exc)
        psi[:, 1] *= keep
        psi /= np.linalg.norm(psi, axis=1, keepdims=True)
        psi[to1] = (1.0, 0.0, 0.0)
        psi[to3] = (0.0, 0.0, 1.0)
    prob = np.abs(psi) ** 2
    p3 = prob[:, 2] + atom.p52 * prob[:, 1]
    p1 = prob[:, 0] + (1.0 - atom.p52) * prob[:, 1]
    u = rng.random(shots) * (p1 + p3)
    return np.where(u < p1, 1, 3)


def mc_trajectory_final_state(psi0, params: TrainParams, atom: AtomModel,
                              n: int, seed: int) -> int:
    """Label of a single quantum-jump trajectory; see :func:`mc_final_labels`."""
    return int(mc_final_labels(psi0, params, atom, n, 1, seed)[0])
