#!/usr/bin/env python3
"""Dataset construction: label covers, vocabularies, windows, frequencies.

Shows the combinatorial side of the toolkit: how n websites get covered by
n(n-1)/2 triples, how traces become fixed-length index windows for the
sequence model and count vectors for the baseline, and what the scrub
transform removes.
"""

from itertools import combinations

from sni_sight.corpus import (
    WebsiteUniverse,
    build_vocabulary,
    frequency_vector,
    pair_cover_triples,
    random_triples,
    scrub,
    split,
    window_sample,
    window_starts,
)
from sni_sight.synth import default_config, generate_corpus

universe = WebsiteUniverse([f"w{i:02d}.example" for i in range(20)])

triples = pair_cover_triples(universe)
print(f"{universe.n} sites -> {len(triples)} pair-covering triples "
      f"(= {universe.n}*{universe.n - 1}/2)")
covered = set()
for t in triples:
    covered.update(frozenset(p) for p in combinations(t, 2))
print(f"all {len(covered)} unordered pairs co-occur in at least one triple\n")

extra = random_triples(universe, count=5, seed=1)
print("5 random triples for a held-out label set:")
for t in extra:
    print("  " + ", ".join(t))

config = default_config(universe, seed=1, pages_per_site=2, burst_mean=4.0)
traces = [t for t, _ in generate_corpus(config, triples[:12], traces_per_label=4)]
train, test = split(traces, 0.85, seed=1)
print(f"\n{len(traces)} traces split into {len(train)} train / {len(test)} test, "
      f"stratified per label")

vocab = build_vocabulary(train)
print(f"vocabulary from the training split: {vocab.size} entries (slot 0 reserved "
      f"for unseen names)")

trace = test[0]
starts = window_starts(trace, 20)
sample = window_sample(trace, vocab, universe, 20, 0)
print(f"\ntrace {trace.trace_id!r}: {len(trace.events)} events, {len(starts)} "
      f"stride-1 windows of length 20")
print(f"first window indices: {sample.indices.tolist()}")
print(f"label bits:           {sample.label.astype(int).tolist()}")

freq = frequency_vector(trace, vocab, universe)
nonzero = {vocab.index_to_name[i]: int(c) for i, c in enumerate(freq.counts) if c}
print(f"\nfrequency vector (order discarded), nonzero entries:")
for name, count in sorted(nonzero.items(), key=lambda kv: -kv[1])[:8]:
    print(f"  {count:3d}  {name}")

scrubbed = scrub(trace, universe)
dropped = len(trace.events) - len(scrubbed.events)
print(f"\nscrub removes events whose name contains a monitored site id: "
      f"{dropped} of {len(trace.events)} events dropped, order preserved")
