"""Deep-unfolded solver: each layer mimics one WMMSE pass with the matrix
inversions replaced by trainable inverse surrogates.

A layer updates, per user, U then W then V using the same builder matrices
as the reference solver (A, E, B), but applies a small parametric map
instead of the true inverse:

    standard variant   S(A) = A+ X + A Y + Z        (A+ = diagonal reciprocal)
    improved variant   S(A) = A^-1 X + P A Y + Z

U and V blocks carry additive offsets; the W block does not. After every
layer's V update the stacked precoder is rescaled to the power budget. The
last layer keeps only the U and W blocks and recovers V through the exact
solver update, which is optimal given U and W, followed by the same
rescaling.

Trainable parameters are stored stacked over users, e.g. Xu has shape
(K, Nr, Nr), and serialized to a binary checkpoint (magic "IAID") in
layer-major, user-major, block order Xu,Yu,Zu,Ou,Xw,Yw,Zw,Xv,Yv,Zv,Ov
followed by Pu,Pw,Pv for the improved variant.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ShapeMismatch
from .kernels import diag_reciprocal, stable_inverse
from .scenario import ChannelSample, SystemConfig, _read_exact, _read_config, \
    _write_config, _complex_to_bytes, _complex_from_bytes
from .wmmse import (PrecoderState, error_matrix, interference_plus_noise,
                    scale_to_power, sum_rate, total_power, v_denominator,
                    v_right_factor, wmmse_iteration, zero_forcing_init)

MODEL_MAGIC = b"IAID"
MODEL_FORMAT_VERSION = 1

STANDARD, IMPROVED = "standard", "improved"

# Serialization order; v-blocks and P-blocks are skipped when absent.
BLOCK_ORDER = ("Xu", "Yu", "Zu", "Ou", "Xw", "Yw", "Zw",
               "Xv", "Yv", "Zv", "Ov", "Pu", "Pw", "Pv")


@dataclass
class LayerParams:
    """Trainable blocks of one layer, stacked over users.

    U-block: Xu, Yu, Zu (K,Nr,Nr), offset Ou (K,Nr,d).
    W-block: Xw, Yw, Zw (K,d,d), no offset.
    V-block: Xv, Yv, Zv (K,Nt,Nt), offset Ov (K,Nt,d); absent in the last
    layer, which uses the exact V update instead.
    Pu/Pw/Pv are the improved-variant left factors, shaped like the Y-blocks.
    """

    Xu: np.ndarray
    Yu: np.ndarray
    Zu: np.ndarray
    Ou: np.ndarray
    Xw: np.ndarray
    Yw: np.ndarray
    Zw: np.ndarray
    Xv: np.ndarray = None
    Yv: np.ndarray = None
    Zv: np.ndarray = None
    Ov: np.ndarray = None
    Pu: np.ndarray = None
    Pw: np.ndarray = None
    Pv: np.ndarray = None

    @property
    def has_v_block(self) -> bool:
        return self.Xv is not None

    def blocks(self):
        """Yield (name, array) for every present block, in a fixed order."""
        for name in BLOCK_ORDER:
            arr = getattr(self, name)
            if arr is not None:
                yield name, arr

    def map(self, fn) -> "LayerParams":
        """New LayerParams with fn applied to every present block."""
        out = {name: fn(arr) for name, arr in self.blocks()}
        return LayerParams(**out)

    def entry_count(self) -> int:
        return sum(arr.size for _, arr in self.blocks())


@dataclass
class ModelParams:
    """The full unfolded model: L layers plus the surrogate variant."""

    L: int
    layers: list
    variant: str = STANDARD

    def param_count(self) -> int:
        """Number of trainable complex entries."""
        return sum(layer.entry_count() for layer in self.layers)

    def map(self, fn) -> "ModelParams":
        return ModelParams(L=self.L, layers=[l.map(fn) for l in self.layers],
                           variant=self.variant)


def operating_scales(config: SystemConfig, seed: int = 0, n_probe: int = 3,
                     n_iters: int = 7) -> dict:
    """Typical magnitudes of the solver quantities at this configuration.

    Runs a few exact solver iterations from the zero-forcing init on freshly
    drawn channels and records median |diagonal| of A, E, B, W plus the rms
    entry of U and V. These set the units in which init_params measures its
    exploration noise.
    """
    from .scenario import sample_channel
    stats = {key: [] for key in ("a", "e", "b", "w", "u", "v")}
    for j in range(n_probe):
        sample = sample_channel(config, 0x414E4348 + 7919 * seed + j)
        state = PrecoderState.from_precoder(zero_forcing_init(sample, config),
                                            config)
        for _ in range(n_iters):
            state = wmmse_iteration(state, sample, config)
        a = interference_plus_noise(sample.H, state.V, config)
        b = v_denominator(sample.H, state.U, state.W, config)
        for k in range(config.K):
            e_k = error_matrix(sample.H[k], state.U[k], state.V[k])
            stats["a"].extend(np.abs(np.diag(a[k])))
            stats["e"].extend(np.abs(np.diag(e_k)))
            stats["w"].extend(np.abs(np.diag(state.W[k])))
        stats["b"].extend(np.abs(np.diag(b)))
        stats["u"].append(np.sqrt(np.mean(np.abs(state.U) ** 2)))
        stats["v"].append(np.sqrt(np.mean(np.abs(state.V) ** 2)))
    return {key: float(np.median(vals)) for key, vals in stats.items()}


def init_params(config: SystemConfig, L: int, variant: str = STANDARD,
                seed: int = 0, noise: float = 0.01) -> ModelParams:
    """Anchored random init: every surrogate starts out approximating the
    inverse it replaces, plus scaled exploration noise.

    The X blocks anchor at the identity, so the leading surrogate term
    reproduces the corresponding solver update: exactly for the improved
    variant, through the diagonal reciprocal for the standard one. The
    standard W path is the exception; its anchor sits in the offset
    (Zw = w_bar I) because the diagonal reciprocal of E explodes whenever a
    surrogate U drives a diagonal entry of E near zero.

    Every other block starts as complex Gaussian noise measured in the units
    of the term it feeds, using magnitudes probed by operating_scales. An
    unanchored iid init amplifies the pre-normalization power by tens of
    orders of magnitude at realistic shapes and the rescaling then crushes
    the gradient, freezing training.
    """
    if L < 1:
        raise ValueError("need at least one layer")
    if variant not in (STANDARD, IMPROVED):
        raise ValueError(f"unknown variant {variant!r}")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    sc = operating_scales(config, seed)

    if variant == STANDARD:
        anchor = {"Xu": 1.0, "Zw": sc["w"], "Xv": 1.0}
        basis = dict(Xu=1.0, Yu=sc["a"] ** -2, Zu=sc["a"] ** -1, Ou=sc["u"],
                     Xw=1.0, Yw=sc["w"] / sc["e"], Zw=sc["w"],
                     Xv=1.0, Yv=sc["b"] ** -2, Zv=sc["b"] ** -1, Ov=sc["v"])
    else:
        anchor = {"Xu": 1.0, "Xw": 1.0, "Xv": 1.0}
        basis = dict(Xu=1.0, Yu=sc["a"] ** -1, Zu=sc["a"] ** -1, Ou=sc["u"],
                     Xw=1.0, Yw=1.0, Zw=1.0,
                     Xv=1.0, Yv=sc["b"] ** -1, Zv=sc["b"] ** -1, Ov=sc["v"],
                     Pu=1.0, Pw=1.0, Pv=1.0)

    def draw(name, rows, cols):
        z = rng.standard_normal((config.K, rows, cols)) \
            + 1j * rng.standard_normal((config.K, rows, cols))
        arr = (noise * basis[name] / np.sqrt(2.0)) * z
        if name in anchor:
            arr = arr + anchor[name] * np.eye(rows, cols)[None, :, :]
        return arr

    layers = []
    for l in range(L):
        last = l == L - 1
        kw = dict(
            Xu=draw("Xu", config.Nr, config.Nr), Yu=draw("Yu", config.Nr, config.Nr),
            Zu=draw("Zu", config.Nr, config.Nr), Ou=draw("Ou", config.Nr, config.d),
            Xw=draw("Xw", config.d, config.d), Yw=draw("Yw", config.d, config.d),
            Zw=draw("Zw", config.d, config.d),
        )
        if not last:
            kw.update(Xv=draw("Xv", config.Nt, config.Nt),
                      Yv=draw("Yv", config.Nt, config.Nt),
                      Zv=draw("Zv", config.Nt, config.Nt),
                      Ov=draw("Ov", config.Nt, config.d))
        if variant == IMPROVED:
            kw.update(Pu=draw("Pu", config.Nr, config.Nr),
                      Pw=draw("Pw", config.d, config.d))
            if not last:
                kw.update(Pv=draw("Pv", config.Nt, config.Nt))
        layers.append(LayerParams(**kw))
    return ModelParams(L=L, layers=layers, variant=variant)


def inv_surrogate(a: np.ndarray, x: np.ndarray, y: np.ndarray, z: np.ndarray,
                  variant: str = STANDARD, p: np.ndarray = None) -> np.ndarray:
    """Trainable stand-in for inv(a); see module docstring for both forms."""
    if variant == STANDARD:
        return diag_reciprocal(a) @ x + a @ y + z
    return stable_inverse(a) @ x + p @ a @ y + z


@dataclass
class LayerTrace:
    """Intermediate quantities of one layer, retained for backpropagation.

    For the last layer, B holds the exact V-update denominator and the
    v-surrogate fields stay None. V_pre is the precoder before the power
    rescaling, a its total power, V the rescaled output.
    """

    A: np.ndarray
    U: np.ndarray
    E: np.ndarray
    W: np.ndarray
    V_pre: np.ndarray
    a: float
    V: np.ndarray
    B: np.ndarray = None
    is_last: bool = False


@dataclass
class ForwardTrace:
    """All per-layer traces plus the scalar outcome for one sample."""

    v0: np.ndarray
    layers: list = field(default_factory=list)
    sum_rate_bits: float = 0.0
    loss_nats: float = 0.0
    normalized: bool = True


def normalize_v(v: np.ndarray, p_t: float):
    """Rescale to the power budget; returns (scaled V, pre-scaling power)."""
    a = total_power(v)
    return scale_to_power(v, p_t), a


def final_layer_v(u: np.ndarray, w: np.ndarray, sample: ChannelSample,
                  config: SystemConfig):
    """Exact precoder update given U and W; identical path to the solver.

    Returns (V, B) with V unscaled, B the denominator used.
    """
    h = sample.H
    b = v_denominator(h, u, w, config)
    b_inv = stable_inverse(b)
    v = np.empty((config.K, config.Nt, config.d), dtype=np.complex128)
    for k in range(config.K):
        v[k] = b_inv @ v_right_factor(h[k], u[k], w[k], config.omega[k])
    return v, b


def forward_layer(v_prev: np.ndarray, layer: LayerParams, sample: ChannelSample,
                  config: SystemConfig, variant: str = STANDARD,
                  last: bool = False, normalize: bool = True) -> LayerTrace:
    """One unfolded layer: U and W from surrogates, then V (surrogate or exact)."""
    h = sample.H
    k_users = config.K
    p = {"u": None, "w": None, "v": None}
    if variant == IMPROVED:
        p = {"u": layer.Pu, "w": layer.Pw, "v": layer.Pv}

    a = interference_plus_noise(h, v_prev, config)
    u = np.empty((k_users, config.Nr, config.d), dtype=np.complex128)
    for k in range(k_users):
        s_u = inv_surrogate(a[k], layer.Xu[k], layer.Yu[k], layer.Zu[k],
                            variant, None if p["u"] is None else p["u"][k])
        u[k] = s_u @ (h[k] @ v_prev[k]) + layer.Ou[k]

    e = np.empty((k_users, config.d, config.d), dtype=np.complex128)
    w = np.empty_like(e)
    for k in range(k_users):
        e[k] = error_matrix(h[k], u[k], v_prev[k])
        w[k] = inv_surrogate(e[k], layer.Xw[k], layer.Yw[k], layer.Zw[k],
                             variant, None if p["w"] is None else p["w"][k])

    if last:
        v_pre, b = final_layer_v(u, w, sample, config)
    else:
        b = v_denominator(h, u, w, config)
        v_pre = np.empty((k_users, config.Nt, config.d), dtype=np.complex128)
        for k in range(k_users):
            s_v = inv_surrogate(b, layer.Xv[k], layer.Yv[k], layer.Zv[k],
                                variant, None if p["v"] is None else p["v"][k])
            v_pre[k] = s_v @ v_right_factor(h[k], u[k], w[k], config.omega[k]) \
                + layer.Ov[k]

    if normalize:
        v, a_pwr = normalize_v(v_pre, config.P_T)
    else:
        v, a_pwr = v_pre, total_power(v_pre)
    return LayerTrace(A=a, U=u, E=e, W=w, V_pre=v_pre, a=a_pwr, V=v, B=b,
                      is_last=last)


def forward_pass(params: ModelParams, sample: ChannelSample, config: SystemConfig,
                 v0: np.ndarray = None, normalize: bool = True) -> ForwardTrace:
    """Run all layers from the zero-forcing init (or a given V0).

    The trace keeps every intermediate needed by the closed-form backward
    pass. normalize=False disables the per-layer rescaling; it exists for
    diagnostics (e.g. comparing against raw solver iterations) and such
    traces must not be fed to the backward pass.
    """
    sample.check_shape(config)
    if v0 is None:
        v0 = zero_forcing_init(sample, config)
    trace = ForwardTrace(v0=v0, normalized=normalize)
    v = v0
    for l, layer in enumerate(params.layers):
        lt = forward_layer(v, layer, sample, config, params.variant,
                           last=(l == params.L - 1), normalize=normalize)
        trace.layers.append(lt)
        v = lt.V
    trace.sum_rate_bits = sum_rate(v, sample, config)
    trace.loss_nats = trace.sum_rate_bits * np.log(2.0)
    return trace


# --- checkpoint serialization -------------------------------------------------

def save_model(path, params: ModelParams, config: SystemConfig) -> None:
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<H", MODEL_FORMAT_VERSION))
        _write_config(f, config)
        f.write(struct.pack("<IB", params.L, 1 if params.variant == IMPROVED else 0))
        for layer in params.layers:
            present = [name for name, _ in layer.blocks()]
            for k in range(config.K):
                for name in present:
                    f.write(_complex_to_bytes(getattr(layer, name)[k]))


def _block_shape(name: str, config: SystemConfig):
    if name in ("Xu", "Yu", "Zu", "Pu"):
        return (config.Nr, config.Nr)
    if name == "Ou":
        return (config.Nr, config.d)
    if name in ("Xw", "Yw", "Zw", "Pw"):
        return (config.d, config.d)
    if name in ("Xv", "Yv", "Zv", "Pv"):
        return (config.Nt, config.Nt)
    return (config.Nt, config.d)  # Ov


def load_model(path):
    """Returns (ModelParams, SystemConfig)."""
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != MODEL_MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != MODEL_FORMAT_VERSION:
            raise FormatError(f"unsupported model version {version}")
        config = _read_config(f)
        n_layers, variant_flag = struct.unpack("<IB", _read_exact(f, 5))
        variant = IMPROVED if variant_flag else STANDARD
        layers = []
        for l in range(n_layers):
            last = l == n_layers - 1
            names = [n for n in BLOCK_ORDER
                     if not (last and n in ("Xv", "Yv", "Zv", "Ov", "Pv"))
                     and not (variant == STANDARD and n in ("Pu", "Pw", "Pv"))]
            arrays = {n: np.empty((config.K,) + _block_shape(n, config),
                                  dtype=np.complex128) for n in names}
            for k in range(config.K):
                for name in names:
                    shape = _block_shape(name, config)
                    nbytes = 16 * shape[0] * shape[1]
                    arrays[name][k] = _complex_from_bytes(_read_exact(f, nbytes), shape)
            layers.append(LayerParams(**arrays))
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after last block")
    return ModelParams(L=n_layers, layers=layers, variant=variant), config
