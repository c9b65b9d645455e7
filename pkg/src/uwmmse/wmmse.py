"""Iterative weighted-MMSE precoder design for the MIMO broadcast channel.

The solver maximizes the weighted sum rate under a total power constraint by
block-coordinate descent on the equivalent weighted MSE objective: receive
filters U, MSE weights W, and precoders V are updated in strict order, each
being the exact minimizer given the other two. The per-user noise enters
scaled by sigma_k^2 / P_T, which makes the objective invariant to a common
complex scaling of all precoders; the power constraint is restored once at
the end by a single rescaling.

The matrix builders here (interference covariance, error matrix, precoder
denominator) are shared with the unfolded network so that the two paths are
algebraically and bitwise comparable.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInput
from .kernels import stable_inverse
from .scenario import ChannelSample, SystemConfig


def total_power(v: np.ndarray) -> float:
    """Sum of Tr(V_k V_k^H) over users."""
    return float(np.vdot(v, v).real)


def scale_to_power(v: np.ndarray, p_t: float) -> np.ndarray:
    """Rescale the stacked precoder to meet the power budget with equality."""
    a = total_power(v)
    if a <= 0.0:
        raise DegenerateInput("cannot scale an all-zero precoder")
    return v * np.sqrt(p_t / a)


# --- shared builders ---------------------------------------------------------

def interference_plus_noise(h: np.ndarray, v: np.ndarray,
                            config: SystemConfig) -> np.ndarray:
    """Per-user receive covariance A_k, shape (K, Nr, Nr).

    A_k = (sigma_k^2 / P_T) * sum_n Tr(V_n V_n^H) * I + sum_m H_k V_m V_m^H H_k^H
    """
    k_users, nr = config.K, config.Nr
    a = np.empty((k_users, nr, nr), dtype=np.complex128)
    pwr = total_power(v)
    eye = np.eye(nr, dtype=np.complex128)
    for k in range(k_users):
        hv = h[k] @ v.transpose(1, 0, 2).reshape(config.Nt, -1)  # H_k [V_1 .. V_K]
        a[k] = (config.sigma[k] ** 2 / config.P_T) * pwr * eye + hv @ hv.conj().T
    return a


def error_matrix(h_k: np.ndarray, u_k: np.ndarray, v_k: np.ndarray) -> np.ndarray:
    """MSE error matrix E_k = I - U_k^H H_k V_k."""
    d = u_k.shape[1]
    return np.eye(d, dtype=np.complex128) - u_k.conj().T @ (h_k @ v_k)


def v_denominator(h: np.ndarray, u: np.ndarray, w: np.ndarray,
                  config: SystemConfig) -> np.ndarray:
    """Common precoder denominator B, shape (Nt, Nt).

    B = sum_k (sigma_k^2 / P_T) Tr(omega_k U_k W_k U_k^H) I
        + sum_m omega_m H_m^H U_m W_m U_m^H H_m
    """
    nt = config.Nt
    b = np.zeros((nt, nt), dtype=np.complex128)
    trace_term = 0.0 + 0.0j
    for k in range(config.K):
        uw = u[k] @ w[k]
        trace_term += (config.sigma[k] ** 2 / config.P_T) * config.omega[k] \
            * np.trace(uw @ u[k].conj().T)
        hu = h[k].conj().T @ uw
        b += config.omega[k] * (hu @ (h[k].conj().T @ u[k]).conj().T)
    b += trace_term * np.eye(nt, dtype=np.complex128)
    return b


def v_right_factor(h_k: np.ndarray, u_k: np.ndarray, w_k: np.ndarray,
                   omega_k: float) -> np.ndarray:
    """Numerator factor omega_k H_k^H U_k W_k of the precoder update."""
    return omega_k * (h_k.conj().T @ u_k @ w_k)


# --- objectives ---------------------------------------------------------------

def sum_rate(v: np.ndarray, sample: ChannelSample, config: SystemConfig) -> float:
    """Weighted sum rate in bits of precoder V under the scaled-noise model.

    Rate_k = log det(I + H_k V_k V_k^H H_k^H Phi_k^{-1}) with the interference
    plus noise term Phi_k = sum_{m != k} H_k V_m V_m^H H_k^H
    + (sigma_k^2 / P_T) sum_n Tr(V_n V_n^H) I. The value is invariant to a
    common scaling of all V_k. An all-zero precoder carries no information
    and returns 0 instead of raising.
    """
    h = sample.H
    pwr = total_power(v)
    if pwr == 0.0:
        return 0.0
    nats = 0.0
    eye = np.eye(config.Nr, dtype=np.complex128)
    for k in range(config.K):
        noise = (config.sigma[k] ** 2 / config.P_T) * pwr
        hv_all = h[k] @ v.transpose(1, 0, 2).reshape(config.Nt, -1)
        psi = noise * eye + hv_all @ hv_all.conj().T
        hv_k = h[k] @ v[k]
        phi = psi - hv_k @ hv_k.conj().T
        nats += config.omega[k] * (_logdet(psi) - _logdet(phi))
    return nats / np.log(2.0)


def _logdet(a: np.ndarray) -> float:
    sign, logabs = np.linalg.slogdet(a)
    return logabs


@dataclass
class PrecoderState:
    """One iterate of the solver: U (K,Nr,d), W (K,d,d), V (K,Nt,d)."""

    U: np.ndarray
    W: np.ndarray
    V: np.ndarray

    @classmethod
    def from_precoder(cls, v: np.ndarray, config: SystemConfig) -> "PrecoderState":
        u = np.zeros((config.K, config.Nr, config.d), dtype=np.complex128)
        w = np.tile(np.eye(config.d, dtype=np.complex128), (config.K, 1, 1))
        return cls(U=u, W=w, V=np.asarray(v, dtype=np.complex128))


def mmse_objective(state: PrecoderState, sample: ChannelSample,
                   config: SystemConfig) -> float:
    """Weighted MSE objective (nats) whose BCD minimization equals rate maximization.

    sum_k omega_k (Tr(W_k E2_k) - log det W_k), where E2_k is the full MSE
    matrix of user k including inter-user interference and the scaled noise.
    """
    h, u, w, v = sample.H, state.U, state.W, state.V
    pwr = total_power(v)
    obj = 0.0
    for k in range(config.K):
        e2 = _mse_matrix(h, u[k], v, k, pwr, config)
        obj += config.omega[k] * (np.trace(w[k] @ e2).real - _logdet(w[k]))
    return obj


def _mse_matrix(h: np.ndarray, u_k: np.ndarray, v: np.ndarray, k: int,
                pwr: float, config: SystemConfig) -> np.ndarray:
    d = config.d
    e1 = np.eye(d, dtype=np.complex128) - u_k.conj().T @ (h[k] @ v[k])
    e2 = e1 @ e1.conj().T
    for m in range(config.K):
        if m == k:
            continue
        x = u_k.conj().T @ (h[k] @ v[m])
        e2 += x @ x.conj().T
    e2 += (pwr / config.P_T) * config.sigma[k] ** 2 * (u_k.conj().T @ u_k)
    return e2


# --- iteration ----------------------------------------------------------------

def wmmse_iteration(state: PrecoderState, sample: ChannelSample,
                    config: SystemConfig) -> PrecoderState:
    """One exact block-coordinate pass: U, then W, then V."""
    h, v_old = sample.H, state.V
    k_users = config.K

    a = interference_plus_noise(h, v_old, config)
    u = np.empty_like(state.U)
    for k in range(k_users):
        u[k] = stable_inverse(a[k]) @ (h[k] @ v_old[k])

    w = np.empty_like(state.W)
    for k in range(k_users):
        w[k] = stable_inverse(error_matrix(h[k], u[k], v_old[k]))

    b_inv = stable_inverse(v_denominator(h, u, w, config))
    v = np.empty_like(state.V)
    for k in range(k_users):
        v[k] = b_inv @ v_right_factor(h[k], u[k], w[k], config.omega[k])

    return PrecoderState(U=u, W=w, V=v)


def zero_forcing_init(sample: ChannelSample, config: SystemConfig) -> np.ndarray:
    """Zero-forcing precoder init, power-normalized; shape (K, Nt, d).

    Stacks the user channels and takes the right pseudo-inverse so that user
    k's block nulls all other users. When K*Nr > Nt the pseudo-inverse no
    longer nulls, so a matched-filter init H_k^H (first d columns) is used.
    """
    h = sample.H
    k_users, nr, d = config.K, config.Nr, config.d
    v = np.empty((k_users, config.Nt, d), dtype=np.complex128)
    if config.zf_feasible():
        stacked = h.reshape(k_users * nr, config.Nt)
        pinv = np.linalg.pinv(stacked)
        for k in range(k_users):
            v[k] = pinv[:, k * nr:k * nr + d]
    else:
        for k in range(k_users):
            v[k] = h[k].conj().T[:, :d]
    return scale_to_power(v, config.P_T)


@dataclass
class SolveReport:
    """Outcome of run_wmmse: best restart's trace plus summary figures."""

    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    sum_rate_bits: float = 0.0
    best_restart: int = 0
    restarts: int = 1
    converged: bool = False

    def to_json(self) -> str:
        return json.dumps({
            "iterations": self.iterations,
            "sum_rate_bits": self.sum_rate_bits,
            "best_restart": self.best_restart,
            "restarts": self.restarts,
            "converged": self.converged,
            "objective_trace": self.objective_trace,
        }, indent=2)


def run_wmmse(sample: ChannelSample, config: SystemConfig, eps: float = 1e-4,
              max_iters: int = 200, restarts: int = 1, seed: int = 0):
    """Run the solver from one or more initializations, keep the best.

    Restart 0 starts from the zero-forcing init; further restarts draw random
    power-normalized precoders from a seeded generator. Each run stops when
    the objective change satisfies |delta| <= eps * (1 + |previous|) or after
    max_iters passes. Returns (PrecoderState, SolveReport); the returned
    precoder is rescaled to meet the power budget with equality.
    """
    sample.check_shape(config)
    best = None
    for r in range(max(1, restarts)):
        if r == 0:
            v0 = zero_forcing_init(sample, config)
        else:
            rng = np.random.default_rng([seed, r])
            shape = (config.K, config.Nt, config.d)
            v0 = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            v0 = scale_to_power(v0, config.P_T)
        state = PrecoderState.from_precoder(v0, config)
        trace = []
        converged = False
        for _ in range(max_iters):
            state = wmmse_iteration(state, sample, config)
            obj = mmse_objective(state, sample, config)
            if trace and abs(obj - trace[-1]) <= eps * (1.0 + abs(trace[-1])):
                trace.append(obj)
                converged = True
                break
            trace.append(obj)
        rate = sum_rate(state.V, sample, config)
        if best is None or rate > best[1].sum_rate_bits:
            report = SolveReport(iterations=len(trace), objective_trace=trace,
                                 sum_rate_bits=rate, best_restart=r,
                                 restarts=max(1, restarts), converged=converged)
            best = (state, report)
    state, report = best
    state.V = scale_to_power(state.V, config.P_T)
    return state, report
