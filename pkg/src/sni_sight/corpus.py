"""Labeled dataset construction from traces.

Covers: the website universe and binary label vectors, the pair-covering
triple construction, random triples, server-name vocabularies, fixed-length
window samples for the sequence model, frequency vectors for the baseline,
the stratified train/test split, and the scrub transform that removes
name-leaking events.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .tls_sni import Trace

OOV_INDEX = 0


class CorpusError(Exception):
    pass


class UniverseTooSmall(CorpusError):
    pass


class CountTooLarge(CorpusError):
    pass


class EmptyCorpus(CorpusError):
    pass


class EmptyTrace(CorpusError):
    pass


class StartBeyondTrace(CorpusError):
    pass


class WebsiteUniverse:
    """Ordered list of monitored websites; the order fixes label slots."""

    def __init__(self, sites):
        sites = list(sites)
        if len(set(sites)) != len(sites):
            raise CorpusError("duplicate site identifiers")
        for s in sites:
            if not s or s != s.lower():
                raise CorpusError(f"site identifiers must be non-empty lowercase: {s!r}")
        self.sites = tuple(sites)
        self._index = {s: i for i, s in enumerate(self.sites)}

    @property
    def n(self) -> int:
        return len(self.sites)

    def index(self, site: str) -> int:
        return self._index[site]

    def __contains__(self, site) -> bool:
        return site in self._index

    def label_vector(self, sites) -> np.ndarray:
        """Binary vector with ones at the given sites' slots."""
        bits = np.zeros(self.n, dtype=np.float64)
        for s in sites:
            if s not in self._index:
                raise CorpusError(f"unknown site {s!r}")
            bits[self._index[s]] = 1.0
        k = int(bits.sum())
        if not 1 <= k <= 4:
            raise CorpusError(f"label must name 1 to 4 sites, got {k}")
        return bits

    def sites_of(self, bits) -> tuple[str, ...]:
        return tuple(self.sites[i] for i in np.flatnonzero(np.asarray(bits) > 0.5))


def pair_cover_triples(universe: WebsiteUniverse) -> list[tuple[str, str, str]]:
    """One triple per unordered site pair, so every pair co-occurs somewhere.

    The pair {a, b} is extended by the site at index (ia+ib) mod n, skipping
    forward past a and b.  Deterministic in the universe order; output length
    is exactly n(n-1)/2.
    """
    n = universe.n
    if n < 3:
        raise UniverseTooSmall(f"need at least 3 sites, got {n}")
    triples = []
    for ia, ib in combinations(range(n), 2):
        ic = (ia + ib) % n
        while ic == ia or ic == ib:
            ic = (ic + 1) % n
        triples.append(tuple(universe.sites[i] for i in sorted((ia, ib, ic))))
    return triples


def random_triples(universe: WebsiteUniverse, count: int, seed: int) -> list[tuple[str, str, str]]:
    """``count`` distinct triples drawn uniformly without replacement."""
    every = list(combinations(universe.sites, 3))
    if count > len(every):
        raise CountTooLarge(f"asked for {count} of {len(every)} possible triples")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(every), size=count, replace=False)
    return [every[i] for i in chosen]


class Vocabulary:
    """Bijection between server names and dense indices; index 0 is reserved
    for names unseen at build time."""

    def __init__(self, names):
        self.index_to_name = ["<oov>"] + list(names)
        self.name_to_index = {n: i for i, n in enumerate(self.index_to_name)}
        if len(self.name_to_index) != len(self.index_to_name):
            raise CorpusError("duplicate names in vocabulary")

    @property
    def size(self) -> int:
        return len(self.index_to_name)

    def encode(self, name: str) -> int:
        return self.name_to_index.get(name, OOV_INDEX)

    def decode(self, index: int) -> str | None:
        if index == OOV_INDEX:
            return None
        return self.index_to_name[index]

    def to_list(self) -> list[str]:
        return self.index_to_name[1:]

    @classmethod
    def from_list(cls, names) -> "Vocabulary":
        return cls(names)


def build_vocabulary(traces) -> Vocabulary:
    """Vocabulary over every server name in the given (training) traces.

    Ordering is by earliest occurrence timestamp, ties broken
    lexicographically, which makes the result independent of trace order.
    """
    traces = list(traces)
    if not traces:
        raise EmptyCorpus("no traces to build a vocabulary from")
    earliest: dict[str, float] = {}
    for trace in traces:
        for event in trace.events:
            ts = earliest.get(event.server_name)
            if ts is None or event.timestamp < ts:
                earliest[event.server_name] = event.timestamp
    ordered = sorted(earliest, key=lambda name: (earliest[name], name))
    return Vocabulary(ordered)


@dataclass
class SequenceSample:
    indices: np.ndarray  # (T,) int64 vocabulary indices
    label: np.ndarray    # (n,) binary
    trace_id: str
    start: int
    padded: bool = False


@dataclass
class FrequencySample:
    counts: np.ndarray   # (V,) int64, OOV accumulates in slot 0
    label: np.ndarray
    trace_id: str = ""


def window_sample(trace: Trace, vocab: Vocabulary, universe: WebsiteUniverse,
                  window: int, start: int) -> SequenceSample:
    """The window of ``window`` consecutive events beginning at ``start``.

    Traces shorter than start+window are padded at the tail with the OOV
    index and flagged.
    """
    if not trace.events:
        raise EmptyTrace(trace.trace_id or "trace with no events")
    if start < 0 or window < 1:
        raise CorpusError("start must be >= 0 and window >= 1")
    if start >= len(trace.events):
        raise StartBeyondTrace(f"start {start} >= {len(trace.events)} events")
    slice_ = trace.events[start : start + window]
    indices = np.full(window, OOV_INDEX, dtype=np.int64)
    for i, event in enumerate(slice_):
        indices[i] = vocab.encode(event.server_name)
    return SequenceSample(
        indices=indices,
        label=universe.label_vector(trace.label),
        trace_id=trace.trace_id,
        start=start,
        padded=len(slice_) < window,
    )


def window_starts(trace: Trace, window: int) -> range:
    """All stride-1 starts yielding a full window; a single padded window
    when the trace is shorter than the window."""
    return range(max(1, len(trace.events) - window + 1))


def frequency_vector(trace: Trace, vocab: Vocabulary, universe: WebsiteUniverse) -> FrequencySample:
    """Order-free count of each vocabulary name in the trace."""
    counts = np.zeros(vocab.size, dtype=np.int64)
    for event in trace.events:
        counts[vocab.encode(event.server_name)] += 1
    return FrequencySample(counts=counts, label=universe.label_vector(trace.label),
                           trace_id=trace.trace_id)


def split(traces, train_fraction: float, seed: int) -> tuple[list[Trace], list[Trace]]:
    """Random train/test partition by whole trace, stratified per label.

    Within each label group the assignment is shuffled from ``seed``.  Train
    counts follow a largest-remainder rule: per-group floors of
    fraction*size, with round(fraction*total) - sum(floors) extra slots
    handed to the groups with the largest fractional remainders (ties in
    label order).  Groups with at least two traces keep at least one trace
    on each side.
    """
    if not 0 < train_fraction < 1:
        raise CorpusError("train_fraction must be in (0, 1)")
    traces = list(traces)
    groups: dict[tuple[str, ...], list[Trace]] = {}
    for trace in traces:
        groups.setdefault(tuple(sorted(trace.label)), []).append(trace)
    keys = sorted(groups)

    target_total = round(train_fraction * len(traces))
    floors = {k: int(train_fraction * len(groups[k])) for k in keys}
    remainders = sorted(
        keys, key=lambda k: (-(train_fraction * len(groups[k]) - floors[k]), k)
    )
    extras = target_total - sum(floors.values())
    take = dict(floors)
    for k in remainders[:max(0, extras)]:
        take[k] += 1
    for k in keys:
        size = len(groups[k])
        if size >= 2:
            take[k] = min(max(take[k], 1), size - 1)
        else:
            take[k] = min(take[k], size)

    rng = np.random.default_rng(seed)
    train: list[Trace] = []
    test: list[Trace] = []
    for k in keys:
        group = groups[k]
        order = rng.permutation(len(group))
        chosen = set(order[: take[k]].tolist())
        for i, trace in enumerate(group):
            (train if i in chosen else test).append(trace)
    return train, test


def scrub(trace: Trace, universe: WebsiteUniverse) -> Trace:
    """Drop every event whose server name contains a monitored site's
    identifier as a substring; survivors keep their order."""
    kept = [
        e for e in trace.events
        if not any(site in e.server_name for site in universe.sites)
    ]
    return Trace(label=list(trace.label), events=kept, trace_id=trace.trace_id)


# ---------------------------------------------------------------------------
# Dataset manifest and CSV export

def dataset_manifest(universe, seed, window, vocab, train, test, trace_files) -> dict:
    return {
        "universe": list(universe.sites),
        "seed": seed,
        "window": window,
        "vocabulary": vocab.to_list(),
        "split": {
            "train": [t.trace_id for t in train],
            "test": [t.trace_id for t in test],
        },
        "trace_files": list(trace_files),
    }


def save_manifest(path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def export_frequency_csv(path, samples, vocab: Vocabulary, universe: WebsiteUniverse) -> None:
    """One row per trace: id, label sites, then a count column per name."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trace_id", "label"] + vocab.index_to_name)
        for s in samples:
            label = ";".join(universe.sites_of(s.label))
            writer.writerow([s.trace_id, label] + s.counts.tolist())
