"""Synthetic MSG3 traces: benign RA traffic mixed with signaling storms.

Each simulated UE or attacker owns one FiveTuple. Benign UEs open sessions
as a Poisson process (geometric gaps, i.e. one Bernoulli trial per
microsecond) and send a few RRC connection requests per session. Attackers
send bursts with uniform intra- and inter-burst gaps. Optional background
traffic of the Other kind rides on one tuple per DU.
"""

from __future__ import annotations

import dataclasses
import ipaddress
from dataclasses import dataclass, field

import numpy as np

from .core import FiveTuple, MsgKind, PacketRecord, TruthLabel, flow_id

US_PER_SECOND = 1_000_000
MAX_PEAK_PPS = US_PER_SECOND  # emulator resolution: one packet per microsecond

CU_IP = "10.0.0.1"
DU_NET = int(ipaddress.IPv4Address("10.0.1.0"))
F1C_PORT = 38472
SCTP = 132
# UE ports start at 1; background tuples use port 0 so they never clash
BACKGROUND_PORT = 0


class ConfigError(ValueError):
    pass


Range = tuple[int, int]


def _check_range(name: str, r: Range, lo: int = 0) -> None:
    if len(r) != 2 or r[0] > r[1] or r[0] < lo:
        raise ConfigError(f"{name}: invalid range {r!r}")


@dataclass(frozen=True)
class BenignProfile:
    num_ues: int = 600
    session_rate_per_ue: float = 2.0  # sessions per second
    msgs_per_session: Range = (1, 4)
    msg_len_bytes: Range = (60, 120)
    intra_session_gap_us: Range = (1_000, 8_000)

    def validate(self) -> None:
        if self.num_ues < 0:
            raise ConfigError("benign.num_ues must be >= 0")
        if self.session_rate_per_ue < 0:
            raise ConfigError("benign.session_rate_per_ue must be >= 0")
        _check_range("benign.msgs_per_session", self.msgs_per_session, lo=1)
        _check_range("benign.msg_len_bytes", self.msg_len_bytes)
        _check_range("benign.intra_session_gap_us", self.intra_session_gap_us)

    def expected_pps_per_ue(self) -> float:
        return self.session_rate_per_ue * sum(self.msgs_per_session) / 2


@dataclass(frozen=True)
class AttackProfile:
    num_attackers: int = 600
    burst_size: Range = (6, 20)
    intra_burst_gap_us: Range = (500, 6_000)
    inter_burst_gap_us: Range = (200_000, 2_300_000)
    msg_len_bytes: Range = (60, 100)

    def validate(self) -> None:
        if self.num_attackers < 0:
            raise ConfigError("attack.num_attackers must be >= 0")
        _check_range("attack.burst_size", self.burst_size, lo=1)
        _check_range("attack.intra_burst_gap_us", self.intra_burst_gap_us)
        _check_range("attack.inter_burst_gap_us", self.inter_burst_gap_us)
        _check_range("attack.msg_len_bytes", self.msg_len_bytes)

    def expected_pps_per_attacker(self, inter_scale: float = 1.0) -> float:
        # renewal-reward: packets per burst over mean cycle length
        b = sum(self.burst_size) / 2
        cycle_us = (b - 1) * sum(self.intra_burst_gap_us) / 2 + inter_scale * sum(self.inter_burst_gap_us) / 2
        if cycle_us <= 0:
            return float("inf")
        return b * US_PER_SECOND / cycle_us


@dataclass(frozen=True)
class ScenarioConfig:
    duration_us: int = 4 * US_PER_SECOND
    benign: BenignProfile = field(default_factory=BenignProfile)
    attack: AttackProfile = field(default_factory=AttackProfile)
    target_aggregate_pps: int | None = None
    num_dus: int = 5
    seed: int = 0
    background_fraction: float = 0.10

    def validate(self) -> None:
        if self.duration_us <= 0:
            raise ConfigError("duration_us must be > 0")
        if self.num_dus < 1:
            raise ConfigError("num_dus must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if not 0.0 <= self.background_fraction < 1.0:
            raise ConfigError("background_fraction must be in [0, 1)")
        self.benign.validate()
        self.attack.validate()
        if self.benign.num_ues + self.attack.num_attackers > 65535 * self.num_dus:
            raise ConfigError("more flows than source ports across DUs")
        if self.target_aggregate_pps is not None and self.target_aggregate_pps <= 0:
            raise ConfigError("target_aggregate_pps must be positive")

    def with_overrides(self, **kw) -> ScenarioConfig:
        return dataclasses.replace(self, **kw)


@dataclass(frozen=True)
class RatePlan:
    benign_pps: float
    attack_pps: float
    background_pps: float
    inter_burst_scale: float

    @property
    def total_pps(self) -> float:
        return self.benign_pps + self.attack_pps + self.background_pps


def plan_rates(config: ScenarioConfig) -> RatePlan:
    """Expected per-class rates; with a target set, stretch or shrink the
    attackers' inter-burst gaps so the aggregate meets it."""
    b, a = config.benign, config.attack
    benign_pps = b.num_ues * b.expected_pps_per_ue()
    scale = 1.0
    attack_pps = a.num_attackers * a.expected_pps_per_attacker()
    if config.target_aggregate_pps is not None:
        rrc_target = config.target_aggregate_pps * (1.0 - config.background_fraction)
        need = rrc_target - benign_pps
        if a.num_attackers == 0:
            if abs(need) > 0.05 * rrc_target:
                raise ConfigError("target rate unreachable without attackers")
        else:
            per = need / a.num_attackers
            bmean = sum(a.burst_size) / 2
            burst_part = (bmean - 1) * sum(a.intra_burst_gap_us) / 2
            inter_mean = sum(a.inter_burst_gap_us) / 2
            if per <= 0 or inter_mean == 0:
                raise ConfigError("benign load alone exceeds target_aggregate_pps")
            cycle = bmean * US_PER_SECOND / per
            if cycle <= burst_part:
                raise ConfigError("attack profile cannot reach target_aggregate_pps")
            scale = (cycle - burst_part) / inter_mean
            attack_pps = a.num_attackers * a.expected_pps_per_attacker(scale)
    rrc = benign_pps + attack_pps
    f = config.background_fraction
    background = rrc * f / (1.0 - f) if f > 0 and config.num_dus > 0 else 0.0
    plan = RatePlan(benign_pps, attack_pps, background, scale)
    if plan.total_pps > MAX_PEAK_PPS:
        raise ConfigError(f"implied rate {plan.total_pps:.0f} pps exceeds 1 packet/us")
    return plan


def _flow_rng(seed: int, kind: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(kind, index)))


def _poisson_arrivals(rng: np.random.Generator, rate_pps: float, duration_us: int) -> np.ndarray:
    if rate_pps <= 0:
        return np.empty(0, dtype=np.int64)
    p = min(rate_pps / US_PER_SECOND, 1.0)
    chunk = max(16, int(rate_pps * duration_us / US_PER_SECOND * 1.5) + 16)
    out: list[np.ndarray] = []
    t = -1
    while True:
        # geometric gap = number of per-microsecond Bernoulli trials to the next hit
        arr = t + np.cumsum(rng.geometric(p, size=chunk))
        out.append(arr[arr < duration_us])
        if arr[-1] >= duration_us:
            break
        t = int(arr[-1])
    return np.concatenate(out)


def _benign_flow(rng: np.random.Generator, prof: BenignProfile, duration_us: int):
    # sessions may start before 0 and spill into the trace window
    warmup = (prof.msgs_per_session[1] - 1) * prof.intra_session_gap_us[1]
    ts: list[int] = []
    for start in _poisson_arrivals(rng, prof.session_rate_per_ue, duration_us + warmup).tolist():
        m = int(rng.integers(prof.msgs_per_session[0], prof.msgs_per_session[1] + 1))
        gaps = rng.integers(prof.intra_session_gap_us[0], prof.intra_session_gap_us[1] + 1, size=m - 1)
        t = start - warmup
        ts.append(t)
        for g in gaps.tolist():
            t += g
            ts.append(t)
    ts_arr = np.sort(np.asarray(ts, dtype=np.int64))
    ts_arr = ts_arr[(ts_arr >= 0) & (ts_arr < duration_us)]
    lengths = rng.integers(prof.msg_len_bytes[0], prof.msg_len_bytes[1] + 1, size=len(ts_arr))
    return ts_arr, lengths


def _attack_flow(rng: np.random.Generator, prof: AttackProfile, scale: float, duration_us: int):
    ilo = int(round(prof.inter_burst_gap_us[0] * scale))
    ihi = int(round(prof.inter_burst_gap_us[1] * scale))
    # run the burst process from well before 0 so the window sees it in
    # steady state; a flow may therefore open mid-burst
    max_cycle = (prof.burst_size[1] - 1) * prof.intra_burst_gap_us[1] + ihi
    ts: list[int] = []
    t = -2 * max_cycle + int(rng.integers(0, max_cycle + 1))
    while t < duration_us:
        b = int(rng.integers(prof.burst_size[0], prof.burst_size[1] + 1))
        gaps = rng.integers(prof.intra_burst_gap_us[0], prof.intra_burst_gap_us[1] + 1, size=b - 1)
        ts.append(t)
        for g in gaps.tolist():
            t += g
            ts.append(t)
        t += int(rng.integers(ilo, ihi + 1))
    ts_arr = np.asarray(ts, dtype=np.int64)
    ts_arr = ts_arr[(ts_arr >= 0) & (ts_arr < duration_us)]
    lengths = rng.integers(prof.msg_len_bytes[0], prof.msg_len_bytes[1] + 1, size=len(ts_arr))
    return ts_arr, lengths


def du_address(du: int) -> int:
    return DU_NET + 1 + du


def flow_tuples(config: ScenarioConfig) -> tuple[list[FiveTuple], list[FiveTuple]]:
    """(benign, attacker) tuples; flows are dealt round-robin over DUs."""
    cu = int(ipaddress.IPv4Address(CU_IP))
    n_b = config.benign.num_ues
    n = n_b + config.attack.num_attackers
    tuples = [
        FiveTuple(du_address(i % config.num_dus), cu, 1 + i // config.num_dus, F1C_PORT, SCTP)
        for i in range(n)
    ]
    return tuples[:n_b], tuples[n_b:]


def generate_trace(config: ScenarioConfig) -> list[PacketRecord]:
    config.validate()
    plan = plan_rates(config)
    benign_tuples, attack_tuples = flow_tuples(config)
    cu = int(ipaddress.IPv4Address(CU_IP))

    ts_parts, len_parts, flow_parts = [], [], []
    flows: list[tuple[FiveTuple, MsgKind, TruthLabel]] = []

    def add(ts, lengths, tup, kind, label):
        flows.append((tup, kind, label))
        ts_parts.append(ts)
        len_parts.append(lengths)
        flow_parts.append(np.full(len(ts), len(flows) - 1, dtype=np.int64))

    for i, tup in enumerate(benign_tuples):
        ts, ln = _benign_flow(_flow_rng(config.seed, 0, i), config.benign, config.duration_us)
        add(ts, ln, tup, MsgKind.RrcConnectionRequest, TruthLabel.Benign)
    for i, tup in enumerate(attack_tuples):
        ts, ln = _attack_flow(_flow_rng(config.seed, 1, i), config.attack, plan.inter_burst_scale, config.duration_us)
        add(ts, ln, tup, MsgKind.RrcConnectionRequest, TruthLabel.Malicious)
    if plan.background_pps > 0:
        per_du = plan.background_pps / config.num_dus
        for du in range(config.num_dus):
            rng = _flow_rng(config.seed, 2, du)
            ts = _poisson_arrivals(rng, per_du, config.duration_us)
            ln = rng.integers(40, 201, size=len(ts))
            add(ts, ln, FiveTuple(du_address(du), cu, BACKGROUND_PORT, F1C_PORT, SCTP), MsgKind.Other, TruthLabel.Unknown)

    if not flows or sum(len(p) for p in ts_parts) == 0:
        return []
    ts = np.concatenate(ts_parts)
    lengths = np.concatenate(len_parts)
    fidx = np.concatenate(flow_parts)
    seq = np.arange(len(ts))
    fids = np.asarray([flow_id(f[0]) for f in flows], dtype=np.int64)
    order = np.lexsort((seq, fids[fidx], ts))
    return [
        PacketRecord(t, flows[k][0], ln, flows[k][1], flows[k][2])
        for t, ln, k in zip(ts[order].tolist(), lengths[order].tolist(), fidx[order].tolist())
    ]


# Per-flow behaviour is identical across presets; load grows with the
# number of UEs and attackers, as with more simulated UEs on a testbed.
_PRESET_SCALE = {"low": (10_000, 1), "moderate": (30_000, 3), "high": (50_000, 5)}


def scenario_presets() -> dict[str, ScenarioConfig]:
    base_b, base_a = BenignProfile(), AttackProfile()
    out = {}
    for name, (pps, k) in _PRESET_SCALE.items():
        out[name] = ScenarioConfig(
            benign=dataclasses.replace(base_b, num_ues=base_b.num_ues * k),
            attack=dataclasses.replace(base_a, num_attackers=base_a.num_attackers * k),
            target_aggregate_pps=pps,
            num_dus=5,
        )
    return out
