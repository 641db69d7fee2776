"""harness.py - seeded experiment suites and their reports

Implements:
- ExperimentConfig: the JSON experiment description, validated on construction (ConfigError)
- check_admissible: closed-form exponent feasibility for the BHT, VARC and FS modes
- random_signal / random_set / restricted: the seeded input generators
- run_suite: one suite over cfg.trials seeded trials, returning a TrialReport
- run_stability: a suite across several grid depths with the 25% growth bar
- mock_interp_growth: layered functions showing the mock interpolation needs epsilon > 0
- parallel_map: order-preserving thread pool capped by HELICOID_THREADS
"""
from __future__ import annotations
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from grid import CutoffSpec, DyadicInterval, GridSpec, bilinear_maximal, chi_tilde, dyadic_intervals, \
    exceptional_set, indicator, lp_norm, maximal_fn
from operators import LinearizationData, VectorFamily, bht_model, dual_exponent, factorize_g, lambda_bht, \
    var_carleson_form, vv_lambda
from outer import EXHAUSTIVE, GREEDY, CheckRow, EmbeddingTrial, OuterSpace, embedding_checks, mu, outer_holder_ratio, \
    outer_lp, tile_function
from packets import FOURIER, WALSH, PacketBackend
from sizes import EXHAUSTIVE_ENERGY_CAP, energy_j, energy_j_exhaustive, size_e, size_e_tree, size_j, size_m, ssize, \
    ssize_q
from stopping import SparseBuildError, StoppingConfig, StoppingInvariantError, as_fraction, check_s_exponents, \
    choose_tau, sst, transfer_exponent, verify_sparse, vvst
from tiles import FAST, POLICIES, RankOneFamily, TriTile, gen_multitile_family, gen_rank1_family, localize, \
    random_subfamily

log = logging.getLogger(__name__)

GEN_SIZE_ENERGY = 'GEN_SIZE_ENERGY'
LOCAL_P0 = 'LOCAL_P0'
LOCAL_P1 = 'LOCAL_P1'
QUASI_LOCAL = 'QUASI_LOCAL'
SPARSE = 'SPARSE'
SPARSE_LQ = 'SPARSE_LQ'
NONSUBADD = 'NONSUBADD'
FS = 'FS'
MOCK_INTERP = 'MOCK_INTERP'
VARC = 'VARC'
OUTER = 'OUTER'
VVST_PACKING = 'VVST_PACKING'
SUITES = (GEN_SIZE_ENERGY, LOCAL_P0, LOCAL_P1, QUASI_LOCAL, SPARSE, SPARSE_LQ, NONSUBADD, FS, MOCK_INTERP, VARC,
          OUTER, VVST_PACKING)

BHT = 'BHT'
MODES = (BHT, VARC, FS)

MIN_J = 3
MAX_CONFIG_J = 12
THREADS_ENV = 'HELICOID_THREADS'
STABILITY_BAR = 0.25
COLUMNS = ['trial_id', 'lhs', 'rhs', 'ratio', 'witness_refs']
INPUT_KINDS = ('gaussian', 'indicator', 'spike', 'bump')
LAST_RUN = 'last_run.json'

DEFAULT_CONFIG: Dict[str, Any] = {
    'j': 5,
    'backend': WALSH,
    'cutoff_m': 10.0,
    'seed': 0,
    'trials': 20,
    'theta': [1 / 3, 1 / 3, 1 / 3],
    's': [2.0, 2.0, 2.0],
    'q': 1.0,
    'p': [4.0, 4.0, 2.0],
    'r_tuples': [[4.0, 4.0, 2.0]],
    'suite': SPARSE,
}


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


class CheckFailed(AssertionError):
    """A hard inequality or structural assertion of a suite failed."""


# -- configuration ------------------------------------------------------------------

def _number(value: Any, name: str) -> float:
    if isinstance(value, bool):
        raise ConfigError(f'{name} must be a number, got {value!r}')
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str) and value.strip().lower() in ('inf', '+inf', 'infinity'):
        return math.inf
    raise ConfigError(f'{name} must be a number or "inf", got {value!r}')


def _integer(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f'{name} must be an integer, got {value!r}')
    return value


def _numbers(value: Any, name: str, length: Optional[int] = None) -> Tuple[float, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f'{name} must be a list, got {value!r}')
    if length is not None and len(value) != length:
        raise ConfigError(f'{name} needs {length} entries, got {len(value)}')
    return tuple(_number(v, f'{name}[{i}]') for i, v in enumerate(value))


def _inv(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


def _plain(x: float) -> Any:
    return 'inf' if math.isinf(x) else x


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: grid, packet model, exponents and the suite to run.

    ``p`` is written (p, q, s) with the output exponent last; each R-tuple is
    (r1, r2, r) with 1/r1 + 1/r2 = 1/r. The remaining fields are optional JSON keys.
    """

    j: int
    backend: str
    cutoff_m: float
    seed: int
    trials: int
    theta: Tuple[float, float, float]
    s: Tuple[float, float, float]
    q: float
    p: Tuple[float, ...]
    r_tuples: Tuple[Tuple[float, float, float], ...]
    suite: str
    max_scale: int = 3
    threshold_c: float = 10.0
    epsilon: float = 0.5
    q1: float = 1.0
    vector_size: int = 4
    var_r: float = 4.0
    var_k: int = 2
    outer_q: float = 4.0
    policy: str = FAST

    def __post_init__(self):
        if self.suite not in SUITES:
            raise ConfigError(f'unknown suite {self.suite!r}; choose one of {", ".join(SUITES)}')
        if not MIN_J <= self.j <= MAX_CONFIG_J:
            raise ConfigError(f'j must lie in [{MIN_J}, {MAX_CONFIG_J}], got {self.j}')
        if self.backend not in (WALSH, FOURIER):
            raise ConfigError(f'unknown backend {self.backend!r}')
        if not 0 < self.cutoff_m < math.inf:
            raise ConfigError(f'cutoff_m must be positive and finite, got {self.cutoff_m}')
        if self.seed < 0:
            raise ConfigError(f'seed must be non-negative, got {self.seed}')
        if self.trials < 0:
            raise ConfigError(f'trials must be non-negative, got {self.trials}')
        if len(self.theta) != 3 or any(not 0 <= t < 1 for t in self.theta) or abs(sum(self.theta) - 1) > 1e-9:
            raise ConfigError(f'theta must be three values in [0, 1) summing to 1, got {self.theta}')
        if len(self.s) != 3 or any(not 1 <= s < math.inf for s in self.s):
            raise ConfigError(f's must be three finite values >= 1, got {self.s}')
        if not self.q > 0:
            raise ConfigError(f'q must be positive, got {self.q}')
        if not 1 <= len(self.p) <= 3 or any(not x > 0 for x in self.p):
            raise ConfigError(f'p must hold one to three positive exponents, got {self.p}')
        if len(self.r_tuples) > 2:
            raise ConfigError(f'R-tuples go up to depth 2, got {len(self.r_tuples)}')
        for rt in self.r_tuples:
            try:
                _check_r_tuple(rt)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.max_scale < 0:
            raise ConfigError(f'max_scale must be non-negative, got {self.max_scale}')
        if not self.threshold_c > 1:
            raise ConfigError(f'threshold_c must exceed 1, got {self.threshold_c}')
        if not 0 <= self.epsilon < math.inf:
            raise ConfigError(f'epsilon must be finite and non-negative, got {self.epsilon}')
        if not 0 < self.q1 < math.inf:
            raise ConfigError(f'q1 must be positive and finite, got {self.q1}')
        if self.vector_size < 1:
            raise ConfigError(f'vector_size must be at least 1, got {self.vector_size}')
        if not self.var_r > 2:
            raise ConfigError(f'var_r must exceed 2, got {self.var_r}')
        if self.var_k < 1:
            raise ConfigError(f'var_k must be at least 1, got {self.var_k}')
        if not self.outer_q > 2:
            raise ConfigError(f'outer_q must exceed 2, got {self.outer_q}')
        if self.policy not in POLICIES:
            raise ConfigError(f'unknown tree policy {self.policy!r}')

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExperimentConfig':
        if not isinstance(data, dict):
            raise ConfigError(f'config must be a JSON object, got {type(data).__name__}')
        required = ('j', 'backend', 'cutoff_m', 'seed', 'trials', 'theta', 's', 'q', 'p', 'r_tuples', 'suite')
        optional = ('max_scale', 'threshold_c', 'epsilon', 'q1', 'vector_size', 'var_r', 'var_k', 'outer_q', 'policy')
        missing = [k for k in required if k not in data]
        if missing:
            raise ConfigError(f'missing config keys: {", ".join(missing)}')
        unknown = sorted(set(data) - set(required) - set(optional))
        if unknown:
            raise ConfigError(f'unknown config keys: {", ".join(unknown)}')
        if not isinstance(data['r_tuples'], (list, tuple)):
            raise ConfigError(f'r_tuples must be a list, got {data["r_tuples"]!r}')
        for key in ('backend', 'suite', 'policy'):
            if key in data and not isinstance(data[key], str):
                raise ConfigError(f'{key} must be a string, got {data[key]!r}')
        kwargs: Dict[str, Any] = {
            'j': _integer(data['j'], 'j'),
            'backend': data['backend'].upper(),
            'cutoff_m': _number(data['cutoff_m'], 'cutoff_m'),
            'seed': _integer(data['seed'], 'seed'),
            'trials': _integer(data['trials'], 'trials'),
            'theta': _numbers(data['theta'], 'theta', 3),
            's': _numbers(data['s'], 's', 3),
            'q': _number(data['q'], 'q'),
            'p': _numbers(data['p'], 'p'),
            'r_tuples': tuple(_numbers(rt, f'r_tuples[{i}]', 3) for i, rt in enumerate(data['r_tuples'])),
            'suite': data['suite'].upper(),
        }
        for key in ('max_scale', 'vector_size', 'var_k'):
            if key in data:
                kwargs[key] = _integer(data[key], key)
        for key in ('threshold_c', 'epsilon', 'q1', 'var_r', 'outer_q'):
            if key in data:
                kwargs[key] = _number(data[key], key)
        if 'policy' in data:
            kwargs['policy'] = data['policy'].upper()
        return cls(**kwargs)

    def to_dict(self) -> Dict[str, Any]:
        out = asdict(self)
        for key, value in out.items():
            if isinstance(value, float):
                out[key] = _plain(value)
        for key in ('theta', 's', 'p'):
            out[key] = [_plain(x) for x in out[key]]
        out['r_tuples'] = [[_plain(x) for x in rt] for rt in out['r_tuples']]
        return out

    def with_overrides(self, **changes: Any) -> 'ExperimentConfig':
        return replace(self, **changes)


def load_config(path: Any) -> ExperimentConfig:
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f'{path}: malformed JSON ({exc})') from exc
    except OSError as exc:
        raise ConfigError(f'{path}: cannot read config ({exc})') from exc
    return ExperimentConfig.from_dict(data)


def default_config(**changes: Any) -> ExperimentConfig:
    data = dict(DEFAULT_CONFIG)
    data.update(changes)
    return ExperimentConfig.from_dict(data)


# -- admissibility ------------------------------------------------------------------

@dataclass(frozen=True)
class Admissibility:
    feasible: bool
    mode: str
    theta: Optional[Tuple[float, float, float]] = None
    m: Tuple[float, ...] = ()
    reason: str = ''

    def to_json(self) -> Dict[str, Any]:
        return {'feasible': self.feasible, 'mode': self.mode, 'theta': self.theta, 'm': list(self.m),
                'reason': self.reason}


def _check_r_tuple(rt: Sequence[float]) -> Tuple[float, float, float]:
    if len(rt) != 3:
        raise ValueError(f'R-tuple needs three exponents (r1, r2, r), got {tuple(rt)}')
    r1, r2, r = (float(x) for x in rt)
    if not (1 < r1 and 1 < r2):
        raise ValueError(f'R-tuple {tuple(rt)}: need 1 < r1, r2 <= inf')
    if not 0.5 < r < math.inf:
        raise ValueError(f'R-tuple {tuple(rt)}: need 1/2 < r < inf')
    if abs(_inv(r1) + _inv(r2) - 1 / r) > 1e-9:
        raise ValueError(f'R-tuple {tuple(rt)}: 1/r1 + 1/r2 differs from 1/r')
    return r1, r2, r


def _exponents(values: Sequence[float], length: int, name: str) -> Tuple[float, ...]:
    if len(values) != length:
        raise ValueError(f'{name} needs {length} exponents, got {tuple(values)}')
    out = tuple(float(v) for v in values)
    if any(not v > 0 for v in out):
        raise ValueError(f'{name} exponents must lie in (0, inf], got {out}')
    return out


def check_admissible(p_tuple: Sequence[float], r_tuples: Sequence[Sequence[float]] = (),
                     mode: str = BHT) -> Admissibility:
    """Closed-form exponent feasibility with a witness theta strictly inside the region.

    BHT: p_tuple = (p, q, s); slot reciprocals are 1/p, 1/q, 1 - 1/s, and likewise
    1/r1, 1/r2, 1 - 1/r for every R-tuple. With a_i the largest reciprocal of slot i and
    m_i = max(0, 2 a_i - 1), the exponents are feasible iff every m_i < 1 and sum m_i < 1.
    FS: p_tuple = (s1, s2, q), feasible iff 1 < s1, s2 < inf and
    1/s1 + 1/s2 < min(3/2, 1 + 1/q).
    VARC: p_tuple = (r,), feasible iff 2 < r <= inf and r' < r^j < inf for every R-tuple.
    """
    if mode not in MODES:
        raise ValueError(f'unknown admissibility mode {mode!r}')
    tuples = [_check_r_tuple(rt) for rt in r_tuples]
    if mode == FS:
        s1, s2, q = _exponents(p_tuple, 3, 'FS tuple')
        if not (1 < s1 < math.inf and 1 < s2 < math.inf):
            return Admissibility(False, mode, reason=f'need 1 < s1, s2 < inf, got ({s1}, {s2})')
        total = 1 / s1 + 1 / s2
        bound = min(1.5, 1 + _inv(q))
        if not total < bound:
            return Admissibility(False, mode, reason=f'1/s1 + 1/s2 = {total:.6g} is not below {bound:.6g}')
        return Admissibility(True, mode)
    if mode == VARC:
        (r,) = _exponents(p_tuple, 1, 'VARC tuple')
        if not r > 2:
            return Admissibility(False, mode, reason=f'variation exponent must exceed 2, got {r}')
        rp = dual_exponent(r)
        for r1, r2, rj in tuples:
            if not rp < rj < math.inf:
                return Admissibility(False, mode, reason=f"need r' = {rp:.6g} < r^j < inf, got r^j = {rj}")
        return Admissibility(True, mode)
    p, q, s = _exponents(p_tuple, 3, 'p tuple')
    slots = [[_inv(p)], [_inv(q)], [1 - _inv(s)]]
    for r1, r2, r in tuples:
        slots[0].append(_inv(r1))
        slots[1].append(_inv(r2))
        slots[2].append(1 - 1 / r)
    m = tuple(max(0.0, 2 * max(slot) - 1) for slot in slots)
    for i, mi in enumerate(m, start=1):
        if not mi < 1:
            return Admissibility(False, mode, m=m, reason=f'slot {i}: m = {mi:.6g} reaches 1')
    if not sum(m) < 1:
        return Admissibility(False, mode, m=m, reason=f'm1 + m2 + m3 = {sum(m):.6g} is not below 1')
    slack = (1 - sum(m)) / 3
    return Admissibility(True, mode, tuple(mi + slack for mi in m), m)


# -- inputs ---------------------------------------------------------------------------

def random_set(g: GridSpec, rng: np.random.Generator, max_pieces: int = 3) -> np.ndarray:
    """Indicator of a union of 1 to ``max_pieces`` random dyadic intervals of scale 1..J-1."""
    pieces = []
    for _ in range(int(rng.integers(1, max_pieces + 1))):
        k = int(rng.integers(1, g.j_levels))
        pieces.append(DyadicInterval(k, int(rng.integers(0, 1 << k))))
    return indicator(g, pieces)


def random_signal(g: GridSpec, rng: np.random.Generator, kind: str = 'gaussian') -> np.ndarray:
    N = g.n_samples
    if kind == 'gaussian':
        return rng.normal(size=N) + 1j * rng.normal(size=N)
    if kind == 'indicator':
        return random_set(g, rng).astype(complex)
    if kind == 'spike':
        out = np.zeros(N, dtype=complex)
        out[int(rng.integers(0, N))] = math.sqrt(N) * np.exp(2j * np.pi * rng.random())
        return out
    if kind == 'bump':
        x = g.points()
        center = rng.random()
        width = 2.0 ** -int(rng.integers(1, g.j_levels - 1))
        dist = np.abs((x - center + 0.5) % 1.0 - 0.5)
        envelope = np.clip(1 - (dist / width) ** 2, 0.0, None) ** 2
        return envelope * np.exp(2j * np.pi * int(rng.integers(0, N)) * x)
    raise ValueError(f'unknown input kind {kind!r}')


def restricted(g: GridSpec, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """A random set E and a unimodular f supported on it."""
    E = random_set(g, rng)
    return E * np.exp(2j * np.pi * rng.random(g.n_samples)), E


def _power(x: float, e: float) -> float:
    if x == 0:
        return 0.0 if e > 0 else (1.0 if e == 0 else math.inf)
    return float(x) ** e


def _lr_rows(rows: np.ndarray, r: float) -> np.ndarray:
    a = np.abs(rows)
    return a.max(axis=0) if math.isinf(r) else np.sum(a ** r, axis=0) ** (1 / r)


def _vector_under(mask: np.ndarray, width: int, r: float, rng: np.random.Generator) -> np.ndarray:
    """``width`` signals whose pointwise l^r norm equals ``mask``."""
    raw = rng.normal(size=(width, len(mask))) + 1j * rng.normal(size=(width, len(mask)))
    return raw / _lr_rows(raw, r)[None, :] * mask[None, :]


# -- suites ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SuiteContext:
    cfg: ExperimentConfig
    grid: GridSpec
    backend: PacketBackend
    cutoff: CutoffSpec
    family: RankOneFamily
    multi_family: Any

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> 'SuiteContext':
        g = GridSpec(cfg.j)
        fam = gen_rank1_family(g, range(min(cfg.max_scale, cfg.j - 2) + 1))
        mfam = gen_multitile_family(g, range(min(cfg.max_scale, cfg.j - 3) + 1))
        return cls(cfg, g, PacketBackend.from_name(cfg.backend), CutoffSpec(cfg.cutoff_m), fam, mfam)

    def stopping(self, s: Optional[Sequence[float]] = None) -> StoppingConfig:
        return StoppingConfig(threshold_c=self.cfg.threshold_c, s=tuple(s if s is not None else self.cfg.s),
                              cutoff=self.cutoff)

    def random_interval(self, rng: np.random.Generator, multi: bool = False) -> DyadicInterval:
        """A dyadic I0 at a scale carrying tiles, so localized families are never empty."""
        top = min(self.cfg.max_scale, self.cfg.j - (3 if multi else 2))
        k = int(rng.integers(0, top + 1))
        return DyadicInterval(k, int(rng.integers(0, 1 << k)))

    def trial_rng(self, trial_id: int) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, trial_id])


Suite = Callable[[SuiteContext, int, np.random.Generator], List[CheckRow]]


def _kind(trial_id: int) -> str:
    return INPUT_KINDS[trial_id % len(INPUT_KINDS)]


def _gen_size_energy(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    kind = _kind(trial_id)
    signals = [random_signal(ctx.grid, rng, kind) for _ in range(3)]
    lhs = abs(lambda_bht(ctx.family, *signals, backend=ctx.backend))
    sizes, energies = [], []
    rhs = 1.0
    for j, (f, t) in enumerate(zip(signals, ctx.cfg.theta), start=1):
        sizes.append(size_j(ctx.family, f, j, ctx.backend, ctx.cfg.policy).value)
        energies.append(energy_j(ctx.family, f, j, ctx.backend).value)
        rhs *= _power(sizes[-1], t) * _power(energies[-1], 1 - t)
    sub = random_subfamily(ctx.family, min(EXHAUSTIVE_ENERGY_CAP, len(ctx.family)), rng)
    for j, f in enumerate(signals, start=1):
        fast = energy_j(sub, f, j, ctx.backend).value
        exact = energy_j_exhaustive(sub, f, j, ctx.backend).value
        if not math.isclose(fast, exact, rel_tol=1e-9, abs_tol=1e-12):
            raise CheckFailed(f'trial {trial_id}: energy_{j} {fast:.6g} differs from the exhaustive {exact:.6g} '
                              f'on tiles {sub.to_json()}')
    return [CheckRow.compare('gen_size_energy', lhs, rhs, input=kind, sizes=sizes, energies=energies)]


def _local_p0(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    g, c = ctx.grid, ctx.cutoff
    I0 = ctx.random_interval(rng)
    loc = localize(ctx.family, I0)
    (f, F), (g2, G), (h, H) = (restricted(g, rng) for _ in range(3))
    H_prime, major = exceptional_set(F, G, H)
    lhs = abs(lambda_bht(loc, f, g2, h * H_prime, ctx.backend))
    sizes = [ssize(loc, X, 1.0, c, I0) for X in (F, G, H_prime)]
    rhs = math.prod(_power(sz, (1 + t) / 2) for sz, t in zip(sizes, ctx.cfg.theta)) * I0.length
    energy = energy_j(loc, f, 1, ctx.backend).value
    witnesses = dict(I0=I0, major=major, ssizes=sizes, energy=energy)
    if ctx.backend.kind == WALSH:
        witnesses['energy_ratio'] = _localized_energy_ratio(ctx, f, trial_id)
    return [CheckRow.compare('local_p0', lhs, rhs, **witnesses)]


def _localized_energy_ratio(ctx: SuiteContext, f: np.ndarray, trial_id: int) -> float:
    """Worst energy_1(P_I0) / 2||f chi_tilde_I0||_2 over every I0 carrying tiles; raises past 1."""
    top = min(ctx.cfg.max_scale, ctx.cfg.j - 2)
    worst = 0.0
    for I0 in dyadic_intervals(ctx.grid, range(top + 1)):
        loc = localize(ctx.family, I0)
        if len(loc) == 0:
            continue
        energy = energy_j(loc, f, 1, ctx.backend).value
        bound = 2 * lp_norm(f * chi_tilde(I0, ctx.cutoff, ctx.grid), 2)
        if energy > bound * (1 + 1e-9):
            raise CheckFailed(f'trial {trial_id}: localized energy {energy:.6g} exceeds {bound:.6g} on {I0}')
        if bound > 0:
            worst = max(worst, energy / bound)
    return worst


def _local_p1(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    g, c = ctx.grid, ctx.cutoff
    r1, r2, r = ctx.cfg.r_tuples[0]
    rp = dual_exponent(r)
    W = ctx.cfg.vector_size
    I0 = ctx.random_interval(rng)
    loc = localize(ctx.family, I0)
    F, G, H = (random_set(g, rng) for _ in range(3))
    H_prime, _ = exceptional_set(F, G, H)
    fs = _vector_under(F, W, r1, rng)
    gs = _vector_under(G, W, r2, rng)
    hs = _vector_under(H_prime, W, rp, rng)
    lhs = abs(vv_lambda(loc, VectorFamily.from_list(fs, r1), VectorFamily.from_list(gs, r2),
                        VectorFamily.from_list(hs, rp), ctx.backend, validate=True))
    sizes = [ssize(loc, X, 1.0, c, I0) for X in (F, G, H_prime)]
    rhs = math.prod(_power(sz, (1 + t) / 2) for sz, t in zip(sizes, ctx.cfg.theta)) * I0.length
    scalar = lambda_bht(loc, fs[0], gs[0], hs[0], ctx.backend)
    single = vv_lambda(loc, VectorFamily.from_list(fs[:1], r1), VectorFamily.from_list(gs[:1], r2),
                       VectorFamily.from_list(hs[:1], rp), ctx.backend)
    if abs(single - scalar) > 1e-12 * (1 + abs(scalar)):
        raise CheckFailed(f'trial {trial_id}: singleton vector form {single} differs from {scalar}')
    return [CheckRow.compare('local_p1', lhs, rhs, I0=I0, width=W, r=[r1, r2, r], ssizes=sizes)]


def _quasi_local(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    g, c = ctx.grid, ctx.cutoff
    s = ctx.cfg.p[2]
    inv_s = _inv(s)
    I0 = ctx.random_interval(rng)
    loc = localize(ctx.family, I0)
    (f, F), (g2, G), (_, H) = (restricted(g, rng) for _ in range(3))
    H_prime, major = exceptional_set(F, G, H)
    out = bht_model(ctx.family, f, g2, ctx.backend, masks=(F, G, H_prime), localized_to=I0)
    lhs = lp_norm(out, s)
    t1, t2, t3 = ctx.cfg.theta
    exps = ((1 + t1) / 2, (1 + t2) / 2, (1 + t3) / 2 - (1 - inv_s))
    sizes = [ssize(loc, X, 1.0, c, I0) for X in (F, G, H_prime)]
    rhs = math.prod(_power(sz, e) for sz, e in zip(sizes, exps)) * I0.length ** inv_s
    return [CheckRow.compare('quasi_local', lhs, rhs, I0=I0, s=_plain(s), major=major, ssizes=sizes)]


def _certified(S: Any, trial_id: int) -> Any:
    cert = verify_sparse(S)
    if not cert.ok or cert.eta < Fraction(1, 2):
        raise CheckFailed(f'trial {trial_id}: sparse family rejected ({cert.violation or f"eta {cert.eta}"})')
    return cert


def _sparse_family(ctx: SuiteContext, trial_id: int, f: Any, g: Any, h: Any, cfg: StoppingConfig) -> Any:
    try:
        return sst(ctx.family, f, g, h, cfg)
    except SparseBuildError as exc:
        raise CheckFailed(f'trial {trial_id}: {exc}') from exc


def _sparse(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    kind = _kind(trial_id)
    f, g, h = (random_signal(ctx.grid, rng, kind) for _ in range(3))
    S = _sparse_family(ctx, trial_id, f, g, h, ctx.stopping())
    cert = _certified(S, trial_id)
    lhs = abs(lambda_bht(ctx.family, f, g, h, ctx.backend))
    return [CheckRow.compare('sparse', lhs, S.sparse_form(), input=kind, nodes=len(S), eta=cert.eta,
                             threshold_c=S.threshold_c, carleson=cert.carleson_constant)]


def _sparse_lq(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    kind = _kind(trial_id)
    q = ctx.cfg.q
    f, g = (random_signal(ctx.grid, rng, kind) for _ in range(2))
    v = np.abs(random_signal(ctx.grid, rng, kind))
    lhs = float(np.mean(np.abs(bht_model(ctx.family, f, g, ctx.backend) * v) ** q))
    S = _sparse_family(ctx, trial_id, f, g, v, ctx.stopping())
    cert = _certified(S, trial_id)
    return [CheckRow.compare('sparse_lq', lhs, S.sparse_form(q), input=kind, q=q, nodes=len(S), eta=cert.eta)]


def _transfer(cfg: ExperimentConfig) -> Tuple[float, Fraction]:
    tau = choose_tau(cfg.q, [rt[2] for rt in cfg.r_tuples])
    return tau, transfer_exponent(cfg.s[2], tau, cfg.q)


def _nonsubadd(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    cfg = ctx.cfg
    kind = _kind(trial_id)
    tau, s3_tilde = _transfer(cfg)
    bound = 1 / as_fraction(cfg.s[2]) - 1 / as_fraction(tau) + 1 / as_fraction(cfg.q)
    if not 1 / s3_tilde < bound:
        raise CheckFailed(f'1/s3~ = {1 / s3_tilde} is not below {bound}')
    r1, r2, r = cfg.r_tuples[0]
    fs = [random_signal(ctx.grid, rng, kind) for _ in range(cfg.vector_size)]
    gs = [random_signal(ctx.grid, rng, kind) for _ in range(cfg.vector_size)]
    v = np.abs(random_signal(ctx.grid, rng, kind))
    outputs = [bht_model(ctx.family, f, g, ctx.backend) for f, g in zip(fs, gs)]
    norm = VectorFamily.from_list(outputs, r).pointwise_norm()
    lhs = float(np.mean((norm * v) ** cfg.q))
    f_norm = VectorFamily.from_list(fs, r1).pointwise_norm()
    g_norm = VectorFamily.from_list(gs, r2).pointwise_norm()
    S = _sparse_family(ctx, trial_id, f_norm, g_norm, v, ctx.stopping((cfg.s[0], cfg.s[1], float(s3_tilde))))
    cert = _certified(S, trial_id)
    return [CheckRow.compare('nonsubadd', lhs, S.sparse_form(cfg.q), input=kind, tau=tau, s3_tilde=s3_tilde,
                             nodes=len(S), eta=cert.eta)]


def _fefferman_stein(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    kind = _kind(trial_id)
    s1, s2 = ctx.cfg.s[0], ctx.cfg.s[1]
    q = ctx.cfg.q
    f, g = (random_signal(ctx.grid, rng, kind) for _ in range(2))
    lhs = lp_norm(bht_model(ctx.family, f, g, ctx.backend), q)
    rhs = lp_norm(maximal_fn(f, s1) * maximal_fn(g, s2), q)
    joint = lp_norm(bilinear_maximal(f, g, s1, s2), q)
    return [CheckRow.compare('fefferman_stein', lhs, rhs, input=kind, bilinear_ratio=lhs / joint if joint > 0 else 0.0)]


def _layer_sum(fam: Any, f: Any, q1: float, c: CutoffSpec) -> float:
    """sum over kappa of 2^kappa ssize(1_{F_kappa})^(1/q1), F_kappa = {2^(kappa-1) < |f| <= 2^kappa}."""
    a = np.abs(np.asarray(f))
    nz = a > 0
    if not nz.any():
        return 0.0
    levels = np.zeros(len(a), dtype=np.int64)
    levels[nz] = np.ceil(np.log2(a[nz])).astype(np.int64)
    total = 0.0
    for kappa in np.unique(levels[nz]):
        layer = (nz & (levels == kappa)).astype(float)
        total += 2.0 ** int(kappa) * ssize(fam, layer, 1.0, c) ** (1 / q1)
    return total


def _mock_interp(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    kind = _kind(trial_id)
    cfg = ctx.cfg
    f = random_signal(ctx.grid, rng, kind)
    lhs = _layer_sum(ctx.family, f, cfg.q1, ctx.cutoff)
    rhs = ssize_q(ctx.family, f, cfg.q1 + cfg.epsilon, ctx.cutoff)
    return [CheckRow.compare('mock_interp', lhs, rhs, input=kind, q1=cfg.q1, epsilon=cfg.epsilon)]


def mock_interp_growth(layers: Iterable[int] = (1, 2, 4, 8), epsilon: float = 0.0, q1: float = 1.0,
                       c: CutoffSpec = CutoffSpec()) -> pd.DataFrame:
    """Layer kappa = 1..L carries the value 2^kappa on a 2^(-kappa q1) share of its own scale-3 interval.

    Every layer contributes about 1 to the layer sum while ssize^(q1) stays about 1, so with
    epsilon = 0 the ratio grows like L.
    """
    g = GridSpec(12)
    intervals = [DyadicInterval(3, n) for n in range(8)]
    fam = RankOneFamily(tuple(TriTile(I, 0) for I in intervals), g)
    records = []
    for L in layers:
        if not 1 <= L <= len(intervals):
            raise ValueError(f'layer count must lie in [1, {len(intervals)}], got {L}')
        f = np.zeros(g.n_samples)
        for kappa, I in enumerate(intervals[:L], start=1):
            width = I.size(g)
            count = max(1, int(round(width * 2.0 ** (-kappa * q1))))
            start = I.start(g) + (width - count) // 2
            f[start:start + count] = 2.0 ** kappa
        lhs = _layer_sum(fam, f, q1, c)
        rhs = ssize_q(fam, f, q1 + epsilon, c)
        records.append({'layers': int(L), 'lhs': lhs, 'rhs': rhs, 'ratio': lhs / rhs})
        log.debug('mock interpolation: %d layers, ratio %.6g', L, lhs / rhs)
    return pd.DataFrame.from_records(records, columns=['layers', 'lhs', 'rhs', 'ratio'])


def _var_carleson(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    kind = _kind(trial_id)
    g, c, mfam = ctx.grid, ctx.cutoff, ctx.multi_family
    r = ctx.cfg.var_r
    rp = dual_exponent(r)
    lin = LinearizationData.random(g, ctx.cfg.var_k, r, rng)
    f, h = (random_signal(g, rng, kind) for _ in range(2))
    rows = []
    _, tree = size_e_tree(mfam, f, ctx.backend)
    if tree is not None and tree.members:
        sub = mfam.subset(tree.members)
        lhs = abs(var_carleson_form(sub, f, h, lin, ctx.backend))
        energy = size_e(sub, f, ctx.backend)
        density = size_m(sub, h, r, lin, c)
        rows.append(CheckRow.compare('var_tree', lhs, energy * density * tree.top_space.length, input=kind,
                                     size_e=energy, size_m=density, tiles=len(tree.members)))
    I0 = ctx.random_interval(rng, multi=True)
    loc = localize(mfam, I0)
    f_loc, F = restricted(g, rng)
    lhs = abs(var_carleson_form(loc, f_loc, h, lin, ctx.backend))
    rhs = _power(ssize(loc, F, 1.0, c, I0), 1 / rp) * ssize(loc, h, 1.0, c, I0) * I0.length
    density = size_m(loc, h, r, lin, c)
    average = ssize(loc, h, rp, c, I0)
    # every enlarged interval of the unlocalized family is one of its spaces
    full_density = size_m(mfam, h, r, lin, c)
    full_average = ssize(mfam, h, rp, c)
    if full_density > full_average * (1 + 1e-9):
        raise CheckFailed(f'trial {trial_id}: density size {full_density:.6g} exceeds '
                          f'the r\' average {full_average:.6g}')
    rows.append(CheckRow.compare('var_local', lhs, rhs, I0=I0, size_m=density, ssize_rprime=average,
                                 density_ratio=density / average if average > 0 else 0.0))
    g1, g2 = factorize_g(h, r)
    if not (np.allclose(g1 * g2, h, rtol=1e-12, atol=1e-12)
            and np.allclose(np.abs(g2) ** rp, np.abs(h), rtol=1e-12, atol=1e-12)):
        raise CheckFailed(f'trial {trial_id}: g = g1 g2 factorization is off')
    return rows


def _outer(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    kind = _kind(trial_id)
    q = ctx.cfg.outer_q
    space = OuterSpace.from_family(ctx.family, 1, ctx.backend)
    f, E = restricted(ctx.grid, rng)
    I0 = ctx.random_interval(rng)
    rows = embedding_checks(space, EmbeddingTrial(f, E, q, I0, ctx.cutoff, GREEDY))
    F = tile_function(space, f)
    weak = outer_lp(space, F, q, weak=True)
    strong = outer_lp(space, F, q)
    if weak > strong * (1 + 1e-9):
        raise CheckFailed(f'trial {trial_id}: weak outer norm {weak:.6g} exceeds the strong one {strong:.6g}')
    signals = [random_signal(ctx.grid, rng, kind) for _ in range(3)]
    rows.append(outer_holder_ratio(ctx.family, signals, (3.0, 3.0, 3.0), ctx.backend))
    subset = rng.choice(len(space), size=min(5, len(space)), replace=False)
    greedy = mu(space, subset, GREEDY)
    exact = mu(space, subset, EXHAUSTIVE)
    if abs(greedy - exact) > 1e-12:
        raise CheckFailed(f'trial {trial_id}: greedy cover {greedy:.6g} differs from the exact one {exact:.6g}')
    rows.append(CheckRow.compare('mu_greedy', greedy, exact))
    return rows


def _vvst_packing(ctx: SuiteContext, trial_id: int, rng: np.random.Generator) -> List[CheckRow]:
    kind = _kind(trial_id)
    f = random_signal(ctx.grid, rng, kind)
    base = ssize(ctx.family, f, 1.0, ctx.cutoff)
    if base == 0:
        return [CheckRow.compare('vvst_packing', 0.0, 1.0, input=kind)]
    try:
        gens = vvst(ctx.family, f, base, ctx.stopping())
    except StoppingInvariantError as exc:
        raise CheckFailed(f'trial {trial_id}: {exc}') from exc
    return [CheckRow.compare('vvst_packing', gens.carleson_constant, 1.0, input=kind,
                             generations=len(gens.levels), residual=len(gens.residual))]


_SUITES: Dict[str, Suite] = {
    GEN_SIZE_ENERGY: _gen_size_energy,
    LOCAL_P0: _local_p0,
    LOCAL_P1: _local_p1,
    QUASI_LOCAL: _quasi_local,
    SPARSE: _sparse,
    SPARSE_LQ: _sparse_lq,
    NONSUBADD: _nonsubadd,
    FS: _fefferman_stein,
    MOCK_INTERP: _mock_interp,
    VARC: _var_carleson,
    OUTER: _outer,
    VVST_PACKING: _vvst_packing,
}


def precheck(cfg: ExperimentConfig) -> Admissibility:
    """Suite-specific exponent checks; ConfigError carries the diagnosis."""
    if cfg.suite == FS:
        verdict = check_admissible((cfg.s[0], cfg.s[1], cfg.q), mode=FS)
    elif cfg.suite == VARC:
        verdict = check_admissible((cfg.var_r,), cfg.r_tuples, VARC)
    else:
        try:
            verdict = check_admissible(cfg.p, cfg.r_tuples, BHT)
        except ValueError as exc:
            raise ConfigError(f'{cfg.suite}: {exc}') from exc
    if not verdict.feasible:
        raise ConfigError(f'{cfg.suite}: exponents are not admissible ({verdict.reason})')
    try:
        if cfg.suite in (LOCAL_P1, NONSUBADD):
            if not cfg.r_tuples:
                raise ConfigError(f'{cfg.suite} needs at least one R-tuple')
            if cfg.suite == LOCAL_P1:
                dual_exponent(cfg.r_tuples[0][2])
        if cfg.suite == SPARSE:
            check_s_exponents(cfg.s, cfg.theta, cfg.q)
        if cfg.suite == SPARSE_LQ:
            if cfg.q > 1:
                raise ConfigError(f'SPARSE_LQ needs q <= 1 for subadditivity, got q={cfg.q}; use NONSUBADD')
            check_s_exponents(cfg.s, cfg.theta, cfg.q)
        if cfg.suite == NONSUBADD:
            tau, _ = _transfer(cfg)
            check_s_exponents(cfg.s, cfg.theta, tau)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f'{cfg.suite}: {exc}') from exc
    return verdict


# -- reports --------------------------------------------------------------------------

def to_jsonable(x: Any) -> Any:
    """json.dumps default hook for numpy scalars, arrays, Fractions and dyadic intervals."""
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, DyadicInterval):
        return x.to_json()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f'cannot serialize {type(x).__name__}')


def witness_refs(row: CheckRow) -> str:
    return json.dumps({'check': row.name, **row.witnesses}, sort_keys=True, default=to_jsonable)


@dataclass
class TrialReport:
    suite: str
    config: Dict[str, Any]
    rows: pd.DataFrame
    notes: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, cfg: ExperimentConfig, results: Sequence[Tuple[int, List[CheckRow]]],
                  notes: Optional[Dict[str, Any]] = None) -> 'TrialReport':
        records = [{'trial_id': int(t), 'lhs': row.lhs, 'rhs': row.rhs, 'ratio': row.ratio,
                    'witness_refs': witness_refs(row)}
                   for t, rows in results for row in rows]
        return cls(cfg.suite, cfg.to_dict(), pd.DataFrame.from_records(records, columns=COLUMNS), dict(notes or {}))

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def max_ratio(self) -> float:
        return float(self.rows['ratio'].astype(float).max()) if len(self.rows) else 0.0

    @property
    def median_ratio(self) -> float:
        return float(self.rows['ratio'].astype(float).median()) if len(self.rows) else 0.0

    def summary(self) -> Dict[str, Any]:
        trials = int(self.rows['trial_id'].nunique()) if len(self.rows) else 0
        return {'suite': self.suite, 'trials': trials, 'rows': len(self.rows),
                'max_ratio': self.max_ratio, 'median_ratio': self.median_ratio}

    def to_csv(self, path: Any = None) -> Optional[str]:
        return self.rows.to_csv(path, index=False, float_format='%.17g')

    def to_json(self) -> str:
        return self.rows.to_json(orient='records', double_precision=15)

    def write(self, out_dir: Any) -> Path:
        """Write <suite>.csv and the last-run record into ``out_dir``; returns the CSV path."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f'{self.suite.lower()}.csv'
        self.to_csv(csv_path)
        record = {'suite': self.suite, 'config': self.config, 'notes': self.notes, 'summary': self.summary(),
                  'rows': self.rows.to_dict(orient='records')}
        (out / LAST_RUN).write_text(json.dumps(record, sort_keys=True, indent=2, default=to_jsonable), encoding='utf-8')
        return csv_path

    @classmethod
    def load(cls, out_dir: Any) -> 'TrialReport':
        path = Path(out_dir) / LAST_RUN
        try:
            record = json.loads(path.read_text(encoding='utf-8'))
        except FileNotFoundError as exc:
            raise ConfigError(f'no prior run in {out_dir}') from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f'{path}: malformed run record ({exc})') from exc
        rows = pd.DataFrame.from_records(record['rows'], columns=COLUMNS)
        return cls(record['suite'], record['config'], rows, record.get('notes', {}))


def thread_count(threads: Optional[int] = None) -> int:
    """Worker threads: ``threads`` (or the CPU count), capped by HELICOID_THREADS, at least 1."""
    cap = os.cpu_count() or 1
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            cap = int(raw)
        except ValueError:
            log.warning('ignoring %s=%r, not an integer', THREADS_ENV, raw)
    n = cap if threads is None else min(int(threads), cap)
    return max(1, n)


def parallel_map(fn: Callable[[Any], Any], items: Iterable[Any], threads: Optional[int] = None) -> List[Any]:
    items = list(items)
    n = thread_count(threads)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as pool:
        return list(pool.map(fn, items))


def run_suite(cfg: ExperimentConfig, threads: Optional[int] = None) -> TrialReport:
    """Run cfg.trials seeded trials of cfg.suite; trial t draws from default_rng([seed, t])."""
    precheck(cfg)
    ctx = SuiteContext.from_config(cfg)
    suite = _SUITES[cfg.suite]

    def one(trial_id: int) -> Tuple[int, List[CheckRow]]:
        rows = suite(ctx, trial_id, ctx.trial_rng(trial_id))
        log.debug('%s trial %d: %d rows', cfg.suite, trial_id, len(rows))
        return trial_id, rows

    results = parallel_map(one, range(cfg.trials), threads)
    notes: Dict[str, Any] = {}
    if cfg.suite == MOCK_INTERP and cfg.trials:
        growth = mock_interp_growth(epsilon=0.0, q1=cfg.q1, c=ctx.cutoff)
        notes['epsilon_zero_growth'] = growth.to_dict(orient='records')
        first, last = float(growth['ratio'].iloc[0]), float(growth['ratio'].iloc[-1])
        if not last >= 2 * first:
            raise CheckFailed(f'epsilon = 0 layered ratios did not grow ({first:.6g} -> {last:.6g})')
    report = TrialReport.from_rows(cfg, results, notes)
    log.debug('%s: %d rows, max ratio %.6g', cfg.suite, len(report), report.max_ratio)
    return report


@dataclass
class StabilityReport:
    suite: str
    table: pd.DataFrame
    bar: float = STABILITY_BAR

    @property
    def stable(self) -> bool:
        growth = self.table['growth'].iloc[1:].astype(float)
        return bool((growth.abs() <= self.bar).all())

    def to_json(self) -> Dict[str, Any]:
        return {'suite': self.suite, 'bar': self.bar, 'stable': self.stable,
                'table': self.table.to_dict(orient='records')}


def _growth(before: float, after: float) -> float:
    if before == 0:
        return 0.0 if after == 0 else math.inf
    return (after - before) / before


def run_stability(cfg: ExperimentConfig, js: Sequence[int] = (5, 6, 7), threads: Optional[int] = None,
                  bar: float = STABILITY_BAR) -> StabilityReport:
    """Max ratio of cfg.suite at every grid depth; stable when consecutive depths differ by at most ``bar``."""
    if not js:
        raise ValueError('need at least one grid depth')
    records = []
    previous = None
    for j in js:
        report = run_suite(cfg.with_overrides(j=int(j)), threads)
        growth = math.nan if previous is None else _growth(previous, report.max_ratio)
        records.append({'j': int(j), 'rows': len(report), 'max_ratio': report.max_ratio,
                        'median_ratio': report.median_ratio, 'growth': growth})
        previous = report.max_ratio
    table = pd.DataFrame.from_records(records, columns=['j', 'rows', 'max_ratio', 'median_ratio', 'growth'])
    out = StabilityReport(cfg.suite, table, bar)
    if not out.stable:
        log.warning('%s: max ratio moves more than %.0f%% between grid depths', cfg.suite, 100 * bar)
    return out
