"""Scenario configuration, channel sampling, and dataset serialization.

Channels are i.i.d. Rayleigh: each entry of H_k is CN(0, 1), drawn with a
per-sample seed so dataset generation is reproducible and order-independent.

The on-disk dataset format is a little-endian binary stream:

    magic     4 bytes  b"UWMM"
    version   u16      currently 1
    Nt,Nr,d,K u32 each
    P_T       f64
    sigma     K * f64  per-user noise standard deviations
    omega     K * f64  per-user rate weights
    count     u64      number of samples
    labels    count * u8   split label per sample (0 train, 1 val, 2 test)
    samples   count records, each: seed u64, then K*Nr*Nt (re, im) f64 pairs
              in user-major row-major order
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionExceeds, FormatError, ShapeMismatch

MAGIC = b"UWMM"
FORMAT_VERSION = 1

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {TRAIN: "train", VAL: "val", TEST: "test"}


@dataclass(frozen=True)
class SystemConfig:
    """Dimensions and physical parameters of one downlink scenario.

    Nt transmit antennas serve K users with Nr receive antennas and d
    streams each, under total transmit power P_T. sigma holds per-user
    noise standard deviations, omega per-user rate weights.
    """

    Nt: int
    Nr: int
    d: int
    K: int
    P_T: float
    sigma: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sigma", np.asarray(self.sigma, dtype=np.float64))
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=np.float64))
        self.validate()

    def validate(self) -> None:
        if min(self.Nt, self.Nr, self.d, self.K) < 1:
            raise ValueError("all dimensions must be positive")
        if self.d > self.Nr:
            raise ValueError(f"d={self.d} exceeds Nr={self.Nr}")
        if self.P_T <= 0:
            raise ValueError("P_T must be positive")
        for name, vec in (("sigma", self.sigma), ("omega", self.omega)):
            if vec.shape != (self.K,):
                raise ValueError(f"{name} must have shape ({self.K},), got {vec.shape}")
            if np.any(vec <= 0):
                raise ValueError(f"{name} entries must be positive")

    @property
    def snr_db(self) -> float:
        """Transmit SNR in dB under the unit-noise convention."""
        return 10.0 * np.log10(self.P_T)

    @classmethod
    def from_snr(cls, Nt: int, Nr: int, d: int, K: int, snr_db: float) -> "SystemConfig":
        """Unit noise, unit weights, P_T = 10^(snr_db/10)."""
        p_t = 10.0 ** (snr_db / 10.0)
        return cls(Nt=Nt, Nr=Nr, d=d, K=K, P_T=p_t,
                   sigma=np.ones(K), omega=np.ones(K))

    def zf_feasible(self) -> bool:
        """Whether the stacked channel admits an exact right pseudo-inverse."""
        return self.K * self.Nr <= self.Nt


@dataclass
class ChannelSample:
    """One realization of the K user channels, H with shape (K, Nr, Nt)."""

    H: np.ndarray
    seed: int = 0

    def check_shape(self, config: SystemConfig) -> None:
        expect = (config.K, config.Nr, config.Nt)
        if self.H.shape != expect:
            raise ShapeMismatch(f"sample shape {self.H.shape}, config wants {expect}")


def sample_channel(config: SystemConfig, seed: int) -> ChannelSample:
    """Draw one channel realization with entries CN(0, 1)."""
    rng = np.random.default_rng(seed)
    shape = (config.K, config.Nr, config.Nt)
    h = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return ChannelSample(H=h / np.sqrt(2.0), seed=seed)


def apply_csi_error(sample: ChannelSample, error_var: float, seed: int) -> ChannelSample:
    """Return a noisy channel estimate H + E with E entries CN(0, error_var)."""
    if error_var < 0:
        raise ValueError("error_var must be non-negative")
    if error_var == 0:
        return ChannelSample(H=sample.H.copy(), seed=sample.seed)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(sample.H.shape) + 1j * rng.standard_normal(sample.H.shape)
    return ChannelSample(H=sample.H + np.sqrt(error_var / 2.0) * noise, seed=sample.seed)


def zero_pad(sample: ChannelSample, from_config: SystemConfig,
             to_config: SystemConfig) -> ChannelSample:
    """Embed a small-scenario sample into the shape a larger model expects.

    from_config is the configuration the model was trained at, to_config the
    smaller scenario the sample lives in. Users beyond to_config.K get an
    all-zero channel; retained channels are zero-extended to Nr x Nt of
    from_config. Identical configs give an identity mapping.
    """
    sample.check_shape(to_config)
    if (to_config.K > from_config.K or to_config.Nt > from_config.Nt
            or to_config.Nr > from_config.Nr):
        raise DimensionExceeds(
            f"target ({to_config.K},{to_config.Nr},{to_config.Nt}) exceeds "
            f"model ({from_config.K},{from_config.Nr},{from_config.Nt})"
        )
    h = np.zeros((from_config.K, from_config.Nr, from_config.Nt), dtype=np.complex128)
    h[:to_config.K, :to_config.Nr, :to_config.Nt] = sample.H
    return ChannelSample(H=h, seed=sample.seed)


@dataclass
class Dataset:
    """A batch of channel samples with train/val/test split labels."""

    config: SystemConfig
    samples: list = field(default_factory=list)
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.uint8))

    def indices(self, split: int) -> np.ndarray:
        return np.flatnonzero(self.labels == split)

    def split(self, split: int) -> list:
        return [self.samples[i] for i in self.indices(split)]

    def __len__(self) -> int:
        return len(self.samples)


def make_dataset(config: SystemConfig, n_train: int, n_val: int, n_test: int,
                 seed: int) -> Dataset:
    """Generate a dataset with per-sample seeds seed + index."""
    counts = [(TRAIN, n_train), (VAL, n_val), (TEST, n_test)]
    samples, labels = [], []
    idx = 0
    for label, n in counts:
        for _ in range(n):
            samples.append(sample_channel(config, seed + idx))
            labels.append(label)
            idx += 1
    return Dataset(config=config, samples=samples,
                   labels=np.asarray(labels, dtype=np.uint8))


# --- binary serialization ---------------------------------------------------

def _read_exact(f, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated file: wanted {n} bytes, got {len(buf)}")
    return buf


def _write_config(f, config: SystemConfig) -> None:
    f.write(struct.pack("<4I", config.Nt, config.Nr, config.d, config.K))
    f.write(struct.pack("<d", config.P_T))
    f.write(config.sigma.astype("<f8").tobytes())
    f.write(config.omega.astype("<f8").tobytes())


def _read_config(f) -> SystemConfig:
    nt, nr, d, k = struct.unpack("<4I", _read_exact(f, 16))
    (p_t,) = struct.unpack("<d", _read_exact(f, 8))
    sigma = np.frombuffer(_read_exact(f, 8 * k), dtype="<f8").copy()
    omega = np.frombuffer(_read_exact(f, 8 * k), dtype="<f8").copy()
    return SystemConfig(Nt=nt, Nr=nr, d=d, K=k, P_T=p_t, sigma=sigma, omega=omega)


def _complex_to_bytes(a: np.ndarray) -> bytes:
    flat = np.ascontiguousarray(a, dtype=np.complex128).reshape(-1)
    pairs = np.empty((flat.size, 2), dtype="<f8")
    pairs[:, 0] = flat.real
    pairs[:, 1] = flat.imag
    return pairs.tobytes()


def _complex_from_bytes(buf: bytes, shape: tuple) -> np.ndarray:
    pairs = np.frombuffer(buf, dtype="<f8").reshape(-1, 2)
    return (pairs[:, 0] + 1j * pairs[:, 1]).reshape(shape)


def save_dataset(path, dataset: Dataset) -> None:
    config = dataset.config
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<H", FORMAT_VERSION))
        _write_config(f, config)
        f.write(struct.pack("<Q", len(dataset)))
        f.write(dataset.labels.astype(np.uint8).tobytes())
        for sample in dataset.samples:
            sample.check_shape(config)
            f.write(struct.pack("<Q", sample.seed))
            f.write(_complex_to_bytes(sample.H))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported dataset version {version}")
        config = _read_config(f)
        (count,) = struct.unpack("<Q", _read_exact(f, 8))
        labels = np.frombuffer(_read_exact(f, count), dtype=np.uint8).copy()
        shape = (config.K, config.Nr, config.Nt)
        nbytes = 16 * config.K * config.Nr * config.Nt
        samples = []
        for _ in range(count):
            (seed,) = struct.unpack("<Q", _read_exact(f, 8))
            h = _complex_from_bytes(_read_exact(f, nbytes), shape)
            samples.append(ChannelSample(H=h, seed=seed))
        trailing = f.read(1)
        if trailing:
            raise FormatError("trailing bytes after last sample")
    return Dataset(config=config, samples=samples, labels=labels)


# --- JSON config ------------------------------------------------------------

def config_to_json(config: SystemConfig) -> str:
    return json.dumps({
        "Nt": config.Nt, "Nr": config.Nr, "d": config.d, "K": config.K,
        "P_T": config.P_T,
        "sigma": config.sigma.tolist(),
        "omega": config.omega.tolist(),
        "snr_db": config.snr_db,
    }, indent=2)


def config_from_json(text: str) -> SystemConfig:
    """Parse a config; P_T may be given directly or derived from snr_db."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"bad config JSON: {exc}") from exc
    try:
        nt, nr, d, k = raw["Nt"], raw["Nr"], raw["d"], raw["K"]
    except KeyError as exc:
        raise FormatError(f"config missing field {exc}") from exc
    if "P_T" in raw:
        p_t = float(raw["P_T"])
    elif "snr_db" in raw:
        p_t = 10.0 ** (float(raw["snr_db"]) / 10.0)
    else:
        raise FormatError("config needs P_T or snr_db")
    sigma = np.asarray(raw.get("sigma", np.ones(k)), dtype=np.float64)
    omega = np.asarray(raw.get("omega", np.ones(k)), dtype=np.float64)
    return SystemConfig(Nt=nt, Nr=nr, d=d, K=k, P_T=p_t, sigma=sigma, omega=omega)


def save_config(path, config: SystemConfig) -> None:
    with open(path, "w") as f:
        f.write(config_to_json(config) + "\n")


def load_config(path) -> SystemConfig:
    with open(path) as f:
        return config_from_json(f.read())
