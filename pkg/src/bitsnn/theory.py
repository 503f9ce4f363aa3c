"""Analytic and Monte Carlo checks of the step-size mismatch claims.

Setting: x is drawn from a half-normal (or full normal) law with scale
sigma and quantized with the step that is optimal for ``b`` bits,
``s = 3 sigma / (2^b - 1)``. When the bit width drops to ``b' < b`` while the
step is kept, the clip bound shrinks and some samples see a larger error.

Two closed forms are provided. :func:`analytic_mismatch_probability` is the
reference bound ``P(x > (2^b' - 1) s)``. :func:`exact_mismatch_probability`
is the probability of a strict error increase under round-to-nearest,
``P(x > (2^b' - 1/2) s)``: samples between the new bound and the next half
step round to the new bound either way and keep their error.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument
from .quant_core import quant_range, round_half_away

DOMAINS = ("half-normal", "full-normal")
CHUNK = 1 << 16
TAIL_CONSTANT = 0.1336


def normal_tail(z):
    """P(Z > z) for a standard normal Z."""
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _two_sided_tail(a):
    # P(|Z| > a): the half-normal tail and the full-normal two-sided tail coincide
    return math.erfc(a / math.sqrt(2.0))


@dataclass(frozen=True)
class MismatchExperiment:
    b: int
    b_prime: int
    sigma: float = 1.0
    n: int = 1_000_000
    seed: int = 0
    domain: str = "half-normal"
    allow_equal: bool = False  # only for the degenerate b' = b check

    def __post_init__(self):
        _check_bits(self.b, self.b_prime, self.allow_equal)
        if not self.sigma > 0:
            raise InvalidArgument(f"sigma must be positive, got {self.sigma}")
        if self.n < 1:
            raise InvalidArgument(f"n must be >= 1, got {self.n}")
        if self.domain not in DOMAINS:
            raise InvalidArgument(f"domain must be one of {DOMAINS}, got {self.domain!r}")

    @property
    def step(self) -> float:
        return 3.0 * self.sigma / (2**self.b - 1)


def _check_bits(b, b_prime, allow_equal=False):
    if b < 2:
        raise InvalidArgument(f"b must be >= 2, got {b}")
    hi = b if allow_equal else b - 1
    if not 1 <= b_prime <= hi:
        raise InvalidArgument(f"b' must lie in [1, {hi}], got b={b}, b'={b_prime}")


def analytic_mismatch_probability(b: int, b_prime: int, domain: str = "half-normal") -> float:
    """Reference bound: P(x > r * 3 sigma) with r = (2^b' - 1) / (2^b - 1)."""
    _check_bits(b, b_prime)
    if domain not in DOMAINS:
        raise InvalidArgument(f"domain must be one of {DOMAINS}, got {domain!r}")
    r = (2**b_prime - 1) / (2**b - 1)
    return _two_sided_tail(3.0 * r)


def exact_mismatch_probability(b: int, b_prime: int, domain: str = "half-normal") -> float:
    """P(Err' > Err) under round-to-nearest: threshold at (2^b' - 1/2) steps."""
    _check_bits(b, b_prime)
    if domain not in DOMAINS:
        raise InvalidArgument(f"domain must be one of {DOMAINS}, got {domain!r}")
    r = (2**b_prime - 0.5) / (2**b - 1)
    return _two_sided_tail(3.0 * r)


def _chunks(n):
    return [min(CHUNK, n - i) for i in range(0, n, CHUNK)]


def _map_chunks(fn, n, seed, workers):
    """Apply ``fn(rng, size)`` to fixed-size chunks with spawned seeds and sum.

    Chunk boundaries and seeds depend only on (n, seed), so the total is the
    same for any worker count.
    """
    sizes = _chunks(n)
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(np.random.default_rng(s), k) for s, k in zip(seqs, sizes)]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(lambda j: fn(*j), jobs))
    else:
        parts = [fn(*j) for j in jobs]
    return sum(parts[1:], parts[0])


def _sample(rng, size, sigma, domain):
    z = rng.standard_normal(size)
    return sigma * (np.abs(z) if domain == "half-normal" else z)


def _quant_err2(x, s, bits, signed):
    r = quant_range(bits, signed)
    if signed:
        # symmetric clip at +-(2^bits - 1) so the full-normal case mirrors the half-normal one
        q = 2**bits - 1
        codes = np.clip(round_half_away(x / s), -q, q)
    else:
        codes = np.clip(round_half_away(x / s), r.q_min, r.q_max)
    return (x - codes * s) ** 2


def _mismatch_mask(x, exp: MismatchExperiment):
    signed = exp.domain == "full-normal"
    s = exp.step
    return _quant_err2(x, s, exp.b_prime, signed) > _quant_err2(x, s, exp.b, signed)


def simulate_mismatch(exp: MismatchExperiment, workers: int = 1) -> float:
    """Fraction of samples whose squared error strictly grows when b drops to b'."""

    def count(rng, k):
        return int(np.count_nonzero(_mismatch_mask(_sample(rng, k, exp.sigma, exp.domain), exp)))

    return _map_chunks(count, exp.n, exp.seed, workers) / exp.n


def half_normal_tail(n: int = 1_000_000, seed: int = 0, threshold: float = 1.5, workers: int = 1) -> float:
    """Monte Carlo P(x > threshold * sigma) for half-normal x (sigma = 1)."""

    def count(rng, k):
        return int(np.count_nonzero(np.abs(rng.standard_normal(k)) > threshold))

    return _map_chunks(count, n, seed, workers) / n


def temporal_accumulation(p: float, T: int) -> float:
    """Probability that at least one of T independent timesteps mismatches."""
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument(f"p must lie in [0, 1], got {p}")
    if T < 1:
        raise InvalidArgument(f"T must be >= 1, got {T}")
    return 1.0 - (1.0 - p) ** T


def simulate_temporal(exp: MismatchExperiment, T: int, workers: int = 1) -> float:
    """Fraction of length-T sequences with a strict error increase at some timestep.

    Each timestep sees a fresh sample, quantized at both widths with the
    same kept step.
    """
    if T < 1:
        raise InvalidArgument(f"T must be >= 1, got {T}")

    def count(rng, k):
        hit = np.zeros(k, dtype=bool)
        for _ in range(T):
            hit |= _mismatch_mask(_sample(rng, k, exp.sigma, exp.domain), exp)
        return int(np.count_nonzero(hit))

    return _map_chunks(count, exp.n, exp.seed, workers) / exp.n


def floor_round_errors(x, step: float, bits: int):
    """Mean squared error of flooring and rounding a given array at ``bits``."""
    x = np.asarray(x, dtype=np.float64)
    f, q, _ = _floor_round_codes(x, step, bits)
    return float(np.mean((x - f * step) ** 2)), float(np.mean((x - q * step) ** 2))


def _floor_round_codes(x, s, bits):
    r = quant_range(bits, True)
    f = np.clip(np.floor(x / s), r.q_min, r.q_max)
    q = np.clip(round_half_away(x / s), r.q_min, r.q_max)
    return f, q, r


def shared_step(bits: int, sigma: float) -> float:
    """3-sigma step for the signed range at ``bits``."""
    return 3.0 * sigma / quant_range(bits, True).q_max


def floor_vs_round_error(b: int, sigma: float = 1.0, n: int = 1_000_000, seed: int = 0,
                         step: float | None = None, workers: int = 1):
    """Mean squared error of flooring and of rounding on N(0, sigma^2) samples.

    Both use the signed range at ``b`` bits and the same step (default
    :func:`shared_step`). Returns (E_floor, E_round).
    """
    if b < 1:
        raise InvalidArgument(f"b must be >= 1, got {b}")
    if not sigma > 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    s = shared_step(b, sigma) if step is None else float(step)

    def sums(rng, k):
        x = sigma * rng.standard_normal(k)
        f, q, _ = _floor_round_codes(x, s, b)
        return np.array([np.sum((x - f * s) ** 2), np.sum((x - q * s) ** 2)])

    tot = _map_chunks(sums, n, seed, workers)
    return float(tot[0] / n), float(tot[1] / n)


def unsaturated_error_ratio(b: int, sigma: float = 1.0, n: int = 1_000_000, seed: int = 0) -> float:
    """E_floor / E_round restricted to samples inside both quantizers' ranges."""
    s = shared_step(b, sigma)

    def sums(rng, k):
        x = sigma * rng.standard_normal(k)
        f, q, r = _floor_round_codes(x, s, b)
        keep = (x / s >= r.q_min) & (x / s < r.q_max)
        x, f, q = x[keep], f[keep], q[keep]
        return np.array([np.sum((x - f * s) ** 2), np.sum((x - q * s) ** 2)])

    tot = _map_chunks(sums, n, seed, 1)
    return float(tot[0] / tot[1])


# ---------------------------------------------------------------- claim suite

MISMATCH_PAIRS = ((2, 1), (3, 1), (4, 2), (4, 3))
CLAIM_COLUMNS = ["claim", "analytic", "empirical", "tolerance", "result"]


@dataclass
class Claim:
    claim: str
    analytic: float
    empirical: float
    tolerance: float
    passed: bool
    relation: str = "abs"  # "abs": |a - e| <= tol; "gt": e > a

    def row(self):
        return [self.claim, repr(self.analytic), repr(self.empirical), repr(self.tolerance),
                "PASS" if self.passed else "FAIL"]


def _abs_claim(name, analytic, empirical, tol):
    return Claim(name, analytic, empirical, tol, abs(analytic - empirical) <= tol)


def run_claims(n: int = 1_000_000, seed: int = 0, workers: int = 1):
    """Evaluate every claim; returns a list of :class:`Claim`.

    Each experiment gets its own seed derived from ``seed``.
    """
    seeds = iter(int(v) for v in np.random.SeedSequence(seed).generate_state(32))
    out = [_abs_claim("tail_1.5sigma", TAIL_CONSTANT, half_normal_tail(n, next(seeds), workers=workers), 0.003)]
    for domain in DOMAINS:
        for b, bp in MISMATCH_PAIRS:
            emp = simulate_mismatch(MismatchExperiment(b, bp, 1.0, n, next(seeds), domain), workers)
            tag = f"{domain}_b{b}_b{bp}"
            out.append(_abs_claim(f"mismatch_bound_{tag}", analytic_mismatch_probability(b, bp, domain),
                                  emp, 0.005))
            out.append(_abs_claim(f"mismatch_exact_{tag}", exact_mismatch_probability(b, bp, domain),
                                  emp, 0.005))
    for b in (2, 3, 4):
        ef, er = floor_vs_round_error(b, 1.0, n, next(seeds), workers=workers)
        out.append(Claim(f"floor_gt_round_b{b}", er, ef, 0.0, ef > er, "gt"))
    out.append(_abs_claim("floor_round_ratio_b6", 4.0, unsaturated_error_ratio(6, 1.0, n, next(seeds)), 0.2))
    p = exact_mismatch_probability(4, 2)
    for T in (1, 2, 4):
        exp = MismatchExperiment(4, 2, 1.0, n, next(seeds))
        out.append(_abs_claim(f"temporal_T{T}", temporal_accumulation(p, T), simulate_temporal(exp, T, workers), 0.01))
    return out


def claims_csv(claims) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CLAIM_COLUMNS)
    for c in claims:
        w.writerow(c.row())
    return buf.getvalue()
