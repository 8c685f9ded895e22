"""sni-sight: SNI traces out of packet captures, website-set classifiers on top.

The package splits into: pcap decoding (``pcap_io``), TLS ClientHello and
server-name parsing (``tls_sni``), dataset construction (``corpus``), a
small float64 neural-network engine (``nn``, ``checkpoint``), training and
evaluation (``pipeline``, ``stats``), a synthetic corpus generator
(``synth``), and the ``sni-sight`` command line (``cli``).
"""

__version__ = "0.1.0"

from .corpus import (
    Vocabulary,
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
from .pipeline import (
    EvalReport,
    FcModelSpec,
    LstmModelSpec,
    Model,
    ablate_scrub,
    compare_reports,
    evaluate,
    predict,
    train_fc,
    train_lstm,
)
from .stats import paired_t_test
from .synth import SynthConfig, emit_pcap, generate_corpus, generate_trace
from .tls_sni import SniEvent, TlsVersion, Trace, extract_trace, read_traces, write_traces

__all__ = [
    "EvalReport", "FcModelSpec", "LstmModelSpec", "Model", "SniEvent", "SynthConfig",
    "TlsVersion", "Trace", "Vocabulary", "WebsiteUniverse", "ablate_scrub",
    "build_vocabulary", "compare_reports", "emit_pcap", "evaluate", "extract_trace",
    "frequency_vector", "generate_corpus", "generate_trace", "pair_cover_triples",
    "paired_t_test", "predict", "random_triples", "read_traces", "scrub", "split",
    "train_fc", "train_lstm", "window_sample", "window_starts", "write_traces",
]
