"""BPSK over AWGN and channel log-likelihood ratios.

Bit 0 maps to +1, bit 1 to -1, so a positive LLR favors bit 0. The SNR axis is
Eb/N0 with the code rate folded into the noise level.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

# numpy's Generator.standard_normal uses the ziggurat method
GAUSSIAN_METHOD = "numpy-pcg64-ziggurat"


def sigma_from_ebn0(ebn0_db: float, rate) -> float:
    rate = float(rate)
    if not 0 < rate <= 1:
        raise ValueError(f"code rate must be in (0, 1], got {rate}")
    return (2.0 * rate * 10.0 ** (ebn0_db / 10.0)) ** -0.5


@dataclass(frozen=True)
class ChannelConfig:
    ebn0_db: float
    code_rate: Fraction
    sigma: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "sigma", sigma_from_ebn0(self.ebn0_db, self.code_rate))


def modulate(bits) -> np.ndarray:
    return 1.0 - 2.0 * np.asarray(bits, dtype=float)


def transmit(signal, sigma, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise. ``sigma`` may be per-frame (broadcast on axis 0)."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ValueError("sigma must be non-negative")
    signal = np.asarray(signal, dtype=float)
    if sigma.ndim == 1 and signal.ndim == 2:
        sigma = sigma[:, None]
    return signal + sigma * rng.standard_normal(signal.shape)


def llr(received, sigma) -> np.ndarray:
    """Channel LLRs 2y/sigma^2. ``sigma`` may be per-frame (broadcast on axis 0)."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive for LLR computation")
    received = np.asarray(received, dtype=float)
    if sigma.ndim == 1 and received.ndim == 2:
        sigma = sigma[:, None]
    return 2.0 * received / sigma**2


def uncoded_ber(ebn0_db) -> np.ndarray:
    """Q(sqrt(2 Eb/N0)) for hard-decision BPSK."""
    from scipy.special import erfc

    ebn0 = 10.0 ** (np.asarray(ebn0_db, dtype=float) / 10.0)
    return 0.5 * erfc(np.sqrt(ebn0))
