"""Synthetic labeled traces that emulate concurrent website visits, plus a
pcap re-emitter so the parser stack can be exercised end to end.

A trace is built from per-site page bursts: one first-party name then a few
third-party names, interleaved across the label's sites.  Knobs control the
separability of the corpus: disjoint per-site name pools make every event
identify its site; a fully shared pool with site-specific burst orderings
leaves frequencies ambiguous while sequences stay informative.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .corpus import WebsiteUniverse
from .tls_sni import SniEvent, TlsVersion, Trace, trace_to_json

MAGIC_US_LE = b"\xd4\xc3\xb2\xa1"  # 0xa1b2c3d4 written little-endian
BASE_TIME_US = 1_000_000 * 1_000_000  # keep timestamps well inside float64 exactness


class SynthError(Exception):
    pass


class UnknownSite(SynthError):
    pass


@dataclass
class SiteProfile:
    """How one website's page visits look on the wire.

    Name templates may use {site} and {rand}.  When ``ordered_burst`` is set
    the burst is that exact name sequence (the order-signal mode); otherwise
    a burst is one first-party name followed by third-party draws.  Names
    within a burst never repeat, so a burst maps cleanly onto one TCP flow.
    """

    site: str
    first_party_templates: list[str]
    third_party: list[tuple[str, float]]
    burst_mean: float = 6.0
    ordered_burst: list[str] | None = None

    def __post_init__(self):
        if not self.first_party_templates:
            raise SynthError(f"{self.site}: need at least one first-party template")
        if self.third_party:
            total = sum(p for _, p in self.third_party)
            if abs(total - 1.0) > 1e-9:
                raise SynthError(f"{self.site}: third-party probabilities sum to {total}")


@dataclass
class SynthConfig:
    universe: list[str]
    profiles: dict[str, SiteProfile]
    pages_per_site: int = 15
    interleaving: str = "round-robin"  # or "exponential-clock"
    noise_rate: float = 0.0
    noise_pool: list[str] = field(default_factory=list)
    tls13_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_rate <= 0.5:
            raise SynthError(f"noise rate must be in [0, 0.5], got {self.noise_rate}")
        if self.interleaving not in ("round-robin", "exponential-clock"):
            raise SynthError(f"unknown interleaving {self.interleaving!r}")
        if self.noise_rate > 0.0 and not self.noise_pool:
            raise SynthError("noise_rate > 0 needs a noise_pool")

    def to_json(self) -> str:
        obj = asdict(self)
        obj["profiles"] = {site: asdict(p) for site, p in self.profiles.items()}
        return json.dumps(obj, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SynthConfig":
        obj = json.loads(text)
        profiles = {
            site: SiteProfile(
                site=p["site"],
                first_party_templates=list(p["first_party_templates"]),
                third_party=[(n, float(w)) for n, w in p["third_party"]],
                burst_mean=float(p.get("burst_mean", 6.0)),
                ordered_burst=p.get("ordered_burst"),
            )
            for site, p in obj["profiles"].items()
        }
        return cls(
            universe=list(obj["universe"]),
            profiles=profiles,
            pages_per_site=int(obj.get("pages_per_site", 15)),
            interleaving=obj.get("interleaving", "round-robin"),
            noise_rate=float(obj.get("noise_rate", 0.0)),
            noise_pool=list(obj.get("noise_pool", [])),
            tls13_fraction=float(obj.get("tls13_fraction", 0.8)),
            seed=int(obj.get("seed", 0)),
        )


# ---------------------------------------------------------------------------
# Config factories

FIRST_PARTY_TEMPLATES = ["www.{site}", "cdn.{site}", "api.{site}", "shop.{site}"]


def default_config(universe: WebsiteUniverse, seed: int = 0, *, pages_per_site: int = 15,
                   templates_per_site: int = 4, third_party_per_site: int = 8,
                   overlap: float = 0.3, burst_mean: float = 6.0, noise_rate: float = 0.05,
                   interleaving: str = "round-robin") -> SynthConfig:
    """Profiles with site-id first-party names and partially shared third
    parties; ``overlap`` is the fraction of each third-party pool drawn from
    a pool common to all sites."""
    shared = [f"ads{j}.trackhub.net" for j in range(max(4, third_party_per_site))]
    profiles = {}
    for i, site in enumerate(universe.sites):
        k_shared = round(third_party_per_site * overlap)
        pool = [shared[(3 * i + j) % len(shared)] for j in range(k_shared)]
        pool += [f"tp{j}.cdn{i:02d}.net" for j in range(third_party_per_site - k_shared)]
        weight = 1.0 / len(pool)
        profiles[site] = SiteProfile(
            site=site,
            first_party_templates=FIRST_PARTY_TEMPLATES[:templates_per_site],
            third_party=[(name, weight) for name in pool],
            burst_mean=burst_mean,
        )
    return SynthConfig(
        universe=list(universe.sites),
        profiles=profiles,
        pages_per_site=pages_per_site,
        interleaving=interleaving,
        noise_rate=noise_rate,
        noise_pool=[f"noise{j}.misc.net" for j in range(32)],
        seed=seed,
    )


def separable_config(universe: WebsiteUniverse, seed: int = 0, *, pages_per_site: int = 3,
                     third_party_per_site: int = 8, burst_mean: float = 3.0) -> SynthConfig:
    """Noise-free profiles with fully disjoint name pools: any single event
    identifies its site, so any window identifies the label."""
    config = default_config(
        universe, seed,
        pages_per_site=pages_per_site,
        third_party_per_site=third_party_per_site,
        overlap=0.0,
        burst_mean=burst_mean,
        noise_rate=0.0,
    )
    return config


def order_signal_config(universe: WebsiteUniverse, seed: int = 0, *, pages_per_site: int = 2,
                        pool_size: int = 5) -> SynthConfig:
    """Every site emits the same name multiset per burst, in a site-specific
    order: frequency vectors carry no label signal, sequences carry it all.

    Each site's burst is an independent seeded permutation of the shared
    pool (re-drawn on collision), so the sites' name-transition patterns
    differ.  Short bursts keep several site signatures inside one window,
    which is what makes the order signal recoverable at desk scale.
    """
    pool = [f"asset{j}.sharedcdn.net" for j in range(pool_size)]
    weight = 1.0 / pool_size
    profiles = {}
    taken: set[tuple[int, ...]] = set()
    for i, site in enumerate(universe.sites):
        rng = np.random.default_rng([seed, 7001, i])
        while True:
            perm = tuple(int(k) for k in rng.permutation(pool_size))
            if perm not in taken:
                taken.add(perm)
                break
        profiles[site] = SiteProfile(
            site=site,
            first_party_templates=["entry.portal.example"],
            third_party=[(name, weight) for name in pool],
            burst_mean=float(pool_size),
            ordered_burst=[pool[k] for k in perm],
        )
    return SynthConfig(
        universe=list(universe.sites),
        profiles=profiles,
        pages_per_site=pages_per_site,
        interleaving="round-robin",
        noise_rate=0.0,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Trace generation

def _rand_token(rng) -> str:
    return "".join(rng.choice(list("abcdefghijklmnopqrstuvwxyz0123456789"), size=5))


def _make_burst(profile: SiteProfile, rng, noise_rate: float, noise_pool) -> list[str]:
    if profile.ordered_burst is not None:
        names = list(profile.ordered_burst)
    else:
        template = profile.first_party_templates[rng.integers(len(profile.first_party_templates))]
        first = template.replace("{site}", profile.site).replace("{rand}", _rand_token(rng))
        names = [first]
        if profile.third_party:
            pool = [n for n, _ in profile.third_party]
            probs = np.array([w for _, w in profile.third_party])
            mean_extra = max(profile.burst_mean - 1.0, 1.0)
            n_extra = min(int(rng.geometric(1.0 / mean_extra)), len(pool))
            if n_extra:
                picks = rng.choice(len(pool), size=n_extra, replace=False, p=probs)
                names += [pool[k] for k in picks]
    if noise_rate > 0.0:
        for slot in range(len(names)):
            if rng.random() < noise_rate:
                unused = [n for n in noise_pool if n not in names]
                if unused:
                    names[slot] = unused[rng.integers(len(unused))]
    # a burst becomes one TCP flow, so repeated names would look like
    # retransmissions and be deduplicated on extraction; keep them unique
    seen = set()
    unique = []
    for n in names:
        if n not in seen:
            seen.add(n)
            unique.append(n)
    return unique


def generate_trace(config: SynthConfig, label, rng=None, trace_id: str = ""):
    """One labeled trace plus per-event (origin site, burst id) annotations.

    Deterministic given the rng (or config.seed when rng is omitted).
    """
    universe = WebsiteUniverse(config.universe)
    for site in label:
        if site not in universe:
            raise UnknownSite(f"label site {site!r} not in the universe")
        if site not in config.profiles:
            raise UnknownSite(f"no profile for site {site!r}")
    if rng is None:
        rng = np.random.default_rng(config.seed)
    sites = sorted(label, key=universe.index)

    bursts: dict[str, list[list[str]]] = {
        site: [_make_burst(config.profiles[site], rng, config.noise_rate, config.noise_pool)
               for _ in range(config.pages_per_site)]
        for site in sites
    }

    ordered: list[tuple[str, list[str]]] = []
    if config.interleaving == "round-robin":
        while any(bursts[s] for s in sites):
            for site in sites:
                if bursts[site]:
                    ordered.append((site, bursts[site].pop(0)))
    else:  # exponential-clock
        schedule = []
        for site in sites:
            t = 0.0
            for burst in bursts[site]:
                t += float(rng.exponential(1.0))
                schedule.append((t, universe.index(site), site, burst))
        schedule.sort(key=lambda item: (item[0], item[1]))
        ordered = [(site, burst) for _, _, site, burst in schedule]

    events: list[SniEvent] = []
    annotations: list[tuple[str, int]] = []
    t_us = BASE_TIME_US + int(rng.integers(0, 10_000_000))
    for burst_id, (site, burst) in enumerate(ordered):
        for name in burst:
            t_us += int(rng.integers(200, 5000))
            version = TlsVersion.TLS13 if rng.random() < config.tls13_fraction else TlsVersion.TLS12
            events.append(SniEvent(name, t_us * 1e-6, version))
            origin = site if _on_profile(name, config.profiles[site]) else "noise"
            annotations.append((origin, burst_id))
    return Trace(label=sites, events=events, trace_id=trace_id), annotations


def _on_profile(name: str, profile: SiteProfile) -> bool:
    if profile.ordered_burst is not None and name in profile.ordered_burst:
        return True
    if any(name == n for n, _ in profile.third_party):
        return True
    # first-party templates with {rand} can produce any prefix before .site
    for template in profile.first_party_templates:
        fixed = template.replace("{site}", profile.site)
        if "{rand}" in fixed:
            if name.endswith(fixed.split("{rand}")[-1]):
                return True
        elif name == fixed:
            return True
    return False


def generate_corpus(config: SynthConfig, labels, traces_per_label: int):
    """generate_trace per (label, repetition) with derived sub-seeds, so the
    corpus is reproducible and independent of generation order."""
    out = []
    for li, label in enumerate(labels):
        for rep in range(traces_per_label):
            rng = np.random.default_rng([config.seed, li, rep])
            trace_id = f"trace-{li:04d}-{rep:03d}"
            out.append(generate_trace(config, label, rng, trace_id))
    return out


def write_corpus(out_dir, config: SynthConfig, labels, traces_per_label: int) -> dict:
    """Write traces.jsonl, the ground-truth sidecar, and a corpus manifest;
    returns the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = generate_corpus(config, labels, traces_per_label)

    with open(out_dir / "traces.jsonl", "w", encoding="utf-8") as fh:
        for trace, _ in corpus:
            fh.write(trace_to_json(trace) + "\n")
    with open(out_dir / "truth.jsonl", "w", encoding="utf-8") as fh:
        for trace, annotations in corpus:
            events = [
                {"sni": e.server_name, "ts": e.timestamp, "ver": e.tls_version.value,
                 "origin": origin}
                for e, (origin, _) in zip(trace.events, annotations)
            ]
            fh.write(json.dumps({"label": trace.label, "events": events}, sort_keys=True) + "\n")

    manifest = {
        "universe": list(config.universe),
        "seed": config.seed,
        "labels": [list(lb) for lb in labels],
        "traces_per_label": traces_per_label,
        "trace_count": len(corpus),
        "config": json.loads(config.to_json()),
        "files": {"traces": "traces.jsonl", "truth": "truth.jsonl"},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# ClientHello and pcap emission

def build_client_hello(sni: str, tls13: bool) -> bytes:
    """A minimal, syntactically valid ClientHello handshake message carrying
    the given server name; TLS 1.3 hellos advertise 0x0304 via
    supported_versions, TLS 1.2 hellos rely on their version field."""
    name = sni.encode("ascii")
    sni_entry = b"\x00" + struct.pack(">H", len(name)) + name
    sni_list = struct.pack(">H", len(sni_entry)) + sni_entry
    extensions = struct.pack(">HH", 0x0000, len(sni_list)) + sni_list
    if tls13:
        versions = b"\x04\x03\x04\x03\x03"  # list length 4: 0x0304, 0x0303
        extensions += struct.pack(">HH", 0x002B, len(versions)) + versions
    body = (
        b"\x03\x03"                      # client version TLS 1.2
        + bytes(32)                      # random
        + b"\x00"                        # empty session id
        + b"\x00\x04\x13\x01\xc0\x2f"    # two cipher suites
        + b"\x01\x00"                    # null compression
        + struct.pack(">H", len(extensions)) + extensions
    )
    return b"\x01" + len(body).to_bytes(3, "big") + body


def client_hello_record(sni: str, tls13: bool) -> bytes:
    message = build_client_hello(sni, tls13)
    return b"\x16\x03\x01" + struct.pack(">H", len(message)) + message


def tcp_packet(src_ip: bytes, dst_ip: bytes, sport: int, dport: int, seq: int, payload: bytes) -> bytes:
    ether = b"\x02\x00\x00\x00\x00\x01" + b"\x02\x00\x00\x00\x00\x02" + b"\x08\x00"
    total = 20 + 20 + len(payload)
    ip = struct.pack(">BBHHHBBH4s4s", 0x45, 0, total, 0x1234, 0x4000, 64, 6, 0, src_ip, dst_ip)
    tcp = struct.pack(">HHIIBBHHH", sport, dport, seq, 0, 5 << 4, 0x18, 65535, 0, 0)
    return ether + ip + tcp + payload


def emit_pcap(trace: Trace, flow_ids=None) -> bytes:
    """Serialize a trace as a classic little-endian microsecond pcap.

    Each event becomes one Ethernet/IPv4/TCP packet carrying its
    ClientHello; events sharing a flow id ride the same fabricated TCP
    connection with advancing sequence numbers.  Addresses are fixed per
    flow and never read downstream.
    """
    if flow_ids is None:
        flow_ids = list(range(len(trace.events)))
    if len(flow_ids) != len(trace.events):
        raise SynthError("need one flow id per event")

    header = MAGIC_US_LE + struct.pack("<HHiIII", 2, 4, 0, 0, 65535, 1)
    out = [header]
    seqs: dict[int, int] = {}
    for event, fid in zip(trace.events, flow_ids):
        src = struct.pack(">BBBB", 10, (fid >> 8) & 0xFF, fid & 0xFF, 2)
        dst = struct.pack(">BBBB", 203, 0, 113, (fid % 250) + 1)
        sport = 40000 + (fid % 20000)
        record = client_hello_record(event.server_name, event.tls_version == TlsVersion.TLS13)
        seq = seqs.get(fid, 1000)
        packet = tcp_packet(src, dst, sport, 443, seq, record)
        seqs[fid] = seq + len(record)
        t_us = round(event.timestamp * 1e6)
        sec, frac = divmod(t_us, 1_000_000)
        out.append(struct.pack("<IIII", sec, frac, len(packet), len(packet)))
        out.append(packet)
    return b"".join(out)
