"""Training and evaluation for the two website-set classifiers.

The sequence model is a single-layer LSTM over one-hot server names with a
dense multi-label head; the baseline is a fully-connected network over
per-trace name frequency vectors.  Both optimize sigmoid cross-entropy with
Adam.  Evaluation accumulates per-class confusion counters over all label
slots and derives accuracy = (TP+TN)/(TP+FP+TN+FN), precision, recall, F1,
and the mean number of correctly recovered labels per sample.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .corpus import (
    Vocabulary,
    WebsiteUniverse,
    frequency_vector,
    scrub,
    window_sample,
    window_starts,
)
from .stats import paired_t_test

EVAL_CHUNK = 256  # windows per batched forward pass


class PipelineError(Exception):
    pass


class EmptyTrainSet(PipelineError):
    pass


class EmptySet(PipelineError):
    pass


class VocabularyMismatch(PipelineError):
    pass


@dataclass
class LstmModelSpec:
    hidden: int = 256
    window: int = 20
    lr: float = 0.01
    patience: int = 5
    eval_every: int = 500
    val_fraction: float = 0.10
    val_max_windows: int = 1024
    threshold: float = 0.5
    clip_norm: float = 5.0
    batch_size: int = 1
    max_steps: int = 20000


@dataclass
class FcModelSpec:
    hidden: tuple[int, ...] = (256, 218, 64)
    dropout_rate: float = 0.2
    epochs: int = 50
    lr: float = 0.01
    threshold: float = 0.5


def vocab_fingerprint(vocab: Vocabulary) -> str:
    return hashlib.sha256("\n".join(vocab.index_to_name).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Models

@dataclass
class Model:
    kind: str                 # "lstm" or "fc"
    params: dict
    n_classes: int
    window: int = 20
    threshold: float = 0.5
    vocab_hash: str = ""

    def _lstm_params(self) -> nn.LstmParams:
        return nn.LstmParams(W=self.params["lstm.W"], U=self.params["lstm.U"], b=self.params["lstm.b"])

    def window_probs(self, indices) -> np.ndarray:
        """Probabilities for a batch of index windows (B, T)."""
        idx = np.atleast_2d(np.asarray(indices))
        h = nn.lstm_hidden_batch(self._lstm_params(), idx)
        logits, _ = nn.dense_forward(self.params["head.W"], self.params["head.b"], h)
        return nn.sigmoid(logits)

    def counts_probs(self, counts) -> np.ndarray:
        """Probabilities for a batch of frequency vectors (B, V)."""
        h = np.atleast_2d(np.asarray(counts, dtype=np.float64))
        i = 0
        while f"fc{i}.W" in self.params:
            h, _ = nn.dense_forward(self.params[f"fc{i}.W"], self.params[f"fc{i}.b"], h, "relu")
            i += 1
        logits, _ = nn.dense_forward(self.params["head.W"], self.params["head.b"], h)
        return nn.sigmoid(logits)

    def probs(self, batch) -> np.ndarray:
        return self.window_probs(batch) if self.kind == "lstm" else self.counts_probs(batch)


def predict(model: Model, sample, vocab: Vocabulary):
    """(probabilities, decision) for one sample; the decision bit is 1 when
    the probability reaches the threshold (ties count as positive)."""
    if model.vocab_hash and vocab_fingerprint(vocab) != model.vocab_hash:
        raise VocabularyMismatch("sample vocabulary differs from the one the model was trained with")
    data = sample.indices if hasattr(sample, "indices") else sample.counts
    probs = model.probs(np.atleast_2d(data))[0]
    return probs, (probs >= model.threshold).astype(np.float64)


# ---------------------------------------------------------------------------
# Training state (resumable)

@dataclass
class TrainState:
    kind: str
    params: dict
    adam: nn.AdamState
    rng_state: dict
    step: int = 0
    best_loss: float = math.inf
    best_params: dict | None = None
    evals_without_improve: int = 0
    finished: bool = False
    history: list = field(default_factory=list)  # (step, validation loss)

    def model(self, n_classes: int, window: int, threshold: float, vocab_hash: str = "") -> Model:
        params = self.best_params if (self.finished and self.best_params is not None) else self.params
        return Model(kind=self.kind, params=params, n_classes=n_classes,
                     window=window, threshold=threshold, vocab_hash=vocab_hash)


def _resume_rng(state_dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state_dict
    return rng


def train_lstm(traces, vocab: Vocabulary, universe: WebsiteUniverse, spec: LstmModelSpec,
               seed: int, state: TrainState | None = None, step_limit: int | None = None) -> TrainState:
    """Window-sampled LSTM training with early stopping.

    Each step draws a trace uniformly, then a window start uniformly, and
    applies one (batch-averaged) Adam update.  Every ``eval_every`` steps
    the mean loss on a held-out validation slice of the training set is
    checked; the best-validation parameters are kept and training stops
    once the loss has failed to improve ``patience`` evaluations in a row.
    Passing ``step_limit`` pauses mid-run; the returned state resumes
    exactly where it left off.
    """
    traces = list(traces)
    if not traces:
        raise EmptyTrainSet("no training traces")
    n = universe.n

    # validation slice: deterministic in (seed, corpus order), not rng state
    order = np.random.default_rng([seed, 3]).permutation(len(traces))
    n_val = max(1, round(spec.val_fraction * len(traces))) if len(traces) > 1 else 0
    val = [traces[i] for i in order[:n_val]]
    fit = [traces[i] for i in order[n_val:]] or val
    val = val or fit
    val_windows, val_labels = _window_matrix(val, vocab, universe, spec.window, spec.val_max_windows)

    if state is None:
        init_rng = np.random.default_rng([seed, 1])
        lstm = nn.init_lstm(init_rng, vocab.size, spec.hidden)
        head_w, head_b = nn.init_dense(init_rng, spec.hidden, n)
        params = {"lstm.W": lstm.W, "lstm.U": lstm.U, "lstm.b": lstm.b,
                  "head.W": head_w, "head.b": head_b}
        rng = np.random.default_rng([seed, 2])
        state = TrainState(kind="lstm", params=params, adam=nn.adam_init(params, spec.lr),
                           rng_state=rng.bit_generator.state)
    else:
        rng = _resume_rng(state.rng_state)

    params = state.params
    while not state.finished and state.step < spec.max_steps:
        if step_limit is not None and state.step >= step_limit:
            break
        grads = {k: np.zeros_like(v) for k, v in params.items()}
        lstm_view = nn.LstmParams(W=params["lstm.W"], U=params["lstm.U"], b=params["lstm.b"])
        for _ in range(spec.batch_size):
            trace = fit[int(rng.integers(len(fit)))]
            start = int(rng.integers(len(window_starts(trace, spec.window))))
            sample = window_sample(trace, vocab, universe, spec.window, start)
            h_all, _, cache = nn.lstm_forward(lstm_view, sample.indices)
            logits, head_cache = nn.dense_forward(params["head.W"], params["head.b"], h_all[-1][None, :])
            _, dlogits = nn.sigmoid_ce_loss(logits, sample.label[None, :])
            d_head_w, d_head_b, dh = nn.dense_backward(head_cache, dlogits)
            d_hidden = np.zeros_like(h_all)
            d_hidden[-1] = dh[0]
            lstm_grads, _ = nn.lstm_backward(lstm_view, cache, d_hidden)
            grads["lstm.W"] += lstm_grads["W"]
            grads["lstm.U"] += lstm_grads["U"]
            grads["lstm.b"] += lstm_grads["b"]
            grads["head.W"] += d_head_w
            grads["head.b"] += d_head_b
        if spec.batch_size > 1:
            for g in grads.values():
                g /= spec.batch_size
        nn.clip_global_norm(grads, spec.clip_norm)
        nn.adam_step(params, grads, state.adam)
        state.step += 1

        if state.step % spec.eval_every == 0:
            val_loss = _validation_loss(params, spec.hidden, val_windows, val_labels)
            state.history.append((state.step, val_loss))
            if val_loss < state.best_loss:
                state.best_loss = val_loss
                state.best_params = {k: v.copy() for k, v in params.items()}
                state.evals_without_improve = 0
            else:
                state.evals_without_improve += 1
            if state.evals_without_improve >= spec.patience:
                state.finished = True
    if state.step >= spec.max_steps:
        state.finished = True
    if state.best_params is None:
        state.best_params = {k: v.copy() for k, v in params.items()}
    state.rng_state = rng.bit_generator.state
    return state


def _window_matrix(traces, vocab, universe, window, cap=None):
    rows, labels = [], []
    for trace in traces:
        for start in window_starts(trace, window):
            rows.append(window_sample(trace, vocab, universe, window, start).indices)
            labels.append(universe.label_vector(trace.label))
    if cap is not None and len(rows) > cap:
        keep = np.linspace(0, len(rows) - 1, cap).round().astype(int)
        rows = [rows[i] for i in keep]
        labels = [labels[i] for i in keep]
    return np.array(rows, dtype=np.int64), np.array(labels)


def _validation_loss(params, hidden, windows, labels) -> float:
    lstm_view = nn.LstmParams(W=params["lstm.W"], U=params["lstm.U"], b=params["lstm.b"])
    losses = []
    for lo in range(0, len(windows), EVAL_CHUNK):
        idx = windows[lo : lo + EVAL_CHUNK]
        h = nn.lstm_hidden_batch(lstm_view, idx)
        logits, _ = nn.dense_forward(params["head.W"], params["head.b"], h)
        loss, _ = nn.sigmoid_ce_loss(logits, labels[lo : lo + EVAL_CHUNK])
        losses.append(loss * len(idx))
    return float(sum(losses) / len(windows))


def train_fc(traces, vocab: Vocabulary, universe: WebsiteUniverse, spec: FcModelSpec,
             seed: int, state: TrainState | None = None, epoch_limit: int | None = None) -> TrainState:
    """Full-batch training of the frequency-vector baseline for a fixed
    number of epochs, dropout active after every hidden layer."""
    traces = list(traces)
    if not traces:
        raise EmptyTrainSet("no training traces")
    x = np.array([frequency_vector(t, vocab, universe).counts for t in traces], dtype=np.float64)
    y = np.array([universe.label_vector(t.label) for t in traces])

    if state is None:
        init_rng = np.random.default_rng([seed, 4])
        params = {}
        fan_in = vocab.size
        for i, width in enumerate(spec.hidden):
            params[f"fc{i}.W"], params[f"fc{i}.b"] = nn.init_dense(init_rng, fan_in, width)
            fan_in = width
        params["head.W"], params["head.b"] = nn.init_dense(init_rng, fan_in, universe.n)
        rng = np.random.default_rng([seed, 5])
        state = TrainState(kind="fc", params=params, adam=nn.adam_init(params, spec.lr),
                           rng_state=rng.bit_generator.state)
    else:
        rng = _resume_rng(state.rng_state)

    params = state.params
    depth = len(spec.hidden)
    while state.step < spec.epochs:
        if epoch_limit is not None and state.step >= epoch_limit:
            break
        h = x
        caches = []
        for i in range(depth):
            h, cache = nn.dense_forward(params[f"fc{i}.W"], params[f"fc{i}.b"], h, "relu")
            h, mask = nn.dropout(h, spec.dropout_rate, rng, training=True)
            caches.append((cache, mask))
        logits, head_cache = nn.dense_forward(params["head.W"], params["head.b"], h)
        loss, dlogits = nn.sigmoid_ce_loss(logits, y)
        state.history.append((state.step + 1, loss))

        grads = {}
        grads["head.W"], grads["head.b"], dh = nn.dense_backward(head_cache, dlogits)
        for i in reversed(range(depth)):
            cache, mask = caches[i]
            dh = dh * mask
            grads[f"fc{i}.W"], grads[f"fc{i}.b"], dh = nn.dense_backward(cache, dh)
        nn.adam_step(params, grads, state.adam)
        state.step += 1

    if state.step >= spec.epochs:
        state.finished = True
        state.best_params = {k: v.copy() for k, v in params.items()}
    state.rng_state = rng.bit_generator.state
    return state


# ---------------------------------------------------------------------------
# Evaluation

@dataclass
class EvalReport:
    sites: list[str]
    tp: list[int]
    fp: list[int]
    tn: list[int]
    fn: list[int]
    sample_count: int
    labels_recovered_total: int
    trace_count: int
    trace_correct_slots: int
    trace_labels_recovered_total: int
    threshold: float
    kind: str

    @property
    def accuracy(self) -> float:
        total = self.sample_count * len(self.sites)
        return (sum(self.tp) + sum(self.tn)) / total if total else 0.0

    @property
    def mean_labels_recovered(self) -> float:
        return self.labels_recovered_total / self.sample_count if self.sample_count else 0.0

    @property
    def trace_accuracy(self) -> float:
        total = self.trace_count * len(self.sites)
        return self.trace_correct_slots / total if total else 0.0

    def per_class(self) -> list[dict]:
        rows = []
        for i, site in enumerate(self.sites):
            tp, fp, tn, fn = self.tp[i], self.fp[i], self.tn[i], self.fn[i]
            recall = tp / (tp + fn) if tp + fn else 0.0
            precision = tp / (tp + fp) if tp + fp else 0.0
            f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
            accuracy = (tp + tn) / (tp + fp + tn + fn) if tp + fp + tn + fn else 0.0
            rows.append({"site": site, "tp": tp, "fp": fp, "tn": tn, "fn": fn,
                         "recall": recall, "precision": precision, "f1": f1,
                         "accuracy": accuracy})
        return rows

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "threshold": self.threshold,
            "sample_count": self.sample_count,
            "accuracy": self.accuracy,
            "mean_labels_recovered": self.mean_labels_recovered,
            "trace_count": self.trace_count,
            "trace_accuracy": self.trace_accuracy,
            "trace_mean_labels_recovered": (
                self.trace_labels_recovered_total / self.trace_count if self.trace_count else 0.0
            ),
            "per_class": self.per_class(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        rows = obj["per_class"]
        report = cls(
            sites=[r["site"] for r in rows],
            tp=[r["tp"] for r in rows], fp=[r["fp"] for r in rows],
            tn=[r["tn"] for r in rows], fn=[r["fn"] for r in rows],
            sample_count=obj["sample_count"],
            labels_recovered_total=round(obj["mean_labels_recovered"] * obj["sample_count"]),
            trace_count=obj["trace_count"],
            trace_correct_slots=round(obj["trace_accuracy"] * obj["trace_count"] * len(rows)),
            trace_labels_recovered_total=round(
                obj["trace_mean_labels_recovered"] * obj["trace_count"]
            ),
            threshold=obj["threshold"],
            kind=obj["kind"],
        )
        return report

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["site", "recall", "precision", "f1", "accuracy"])
            for row in self.per_class():
                writer.writerow([row["site"], row["recall"], row["precision"],
                                 row["f1"], row["accuracy"]])


def evaluate(model: Model, traces, vocab: Vocabulary, universe: WebsiteUniverse,
             dump_path=None) -> EvalReport:
    """Score a model over an evaluation set.

    The sequence model is scored on every stride-1 window of every trace
    (one padded window for traces shorter than the window); the baseline on
    one frequency vector per trace.  A trace-level aggregate (decision on
    the mean probability across the trace's windows) is reported alongside.
    Pass ``dump_path`` to write one JSON line per sample for auditing.
    """
    traces = list(traces)
    if not traces:
        raise EmptySet("no traces to evaluate")
    n = universe.n
    tp = np.zeros(n, dtype=np.int64)
    fp = np.zeros(n, dtype=np.int64)
    tn = np.zeros(n, dtype=np.int64)
    fn = np.zeros(n, dtype=np.int64)
    samples = 0
    recovered = 0
    trace_correct = 0
    trace_recovered = 0
    dump = open(dump_path, "w", encoding="utf-8") if dump_path else None
    try:
        for trace in traces:
            truth = universe.label_vector(trace.label)
            if model.kind == "lstm":
                if trace.events:
                    starts = list(window_starts(trace, model.window))
                    windows = np.array(
                        [window_sample(trace, vocab, universe, model.window, s).indices for s in starts],
                        dtype=np.int64,
                    )
                else:
                    # a trace scrubbed down to nothing still scores: one all-OOV window
                    starts = [0]
                    windows = np.zeros((1, model.window), dtype=np.int64)
                probs = np.vstack([
                    model.window_probs(windows[lo : lo + EVAL_CHUNK])
                    for lo in range(0, len(windows), EVAL_CHUNK)
                ])
            else:
                starts = [None]
                probs = model.counts_probs(frequency_vector(trace, vocab, universe).counts[None, :])
            decisions = (probs >= model.threshold).astype(np.float64)
            pos = truth > 0.5
            for row_i, decision in enumerate(decisions):
                dec = decision > 0.5
                tp += (dec & pos)
                fp += (dec & ~pos)
                tn += (~dec & ~pos)
                fn += (~dec & pos)
                recovered += int((dec & pos).sum())
                samples += 1
                if dump:
                    dump.write(json.dumps({
                        "trace_id": trace.trace_id,
                        "start": starts[row_i],
                        "probs": [round(float(p), 9) for p in probs[row_i]],
                        "decision": [int(b) for b in dec],
                        "truth": [int(b) for b in pos],
                    }) + "\n")
            mean_dec = probs.mean(axis=0) >= model.threshold
            trace_correct += int((mean_dec == pos).sum())
            trace_recovered += int((mean_dec & pos).sum())
    finally:
        if dump:
            dump.close()
    return EvalReport(
        sites=list(universe.sites),
        tp=tp.tolist(), fp=fp.tolist(), tn=tn.tolist(), fn=fn.tolist(),
        sample_count=samples,
        labels_recovered_total=recovered,
        trace_count=len(traces),
        trace_correct_slots=trace_correct,
        trace_labels_recovered_total=trace_recovered,
        threshold=model.threshold,
        kind=model.kind,
    )


def ablate_scrub(model: Model, traces, vocab: Vocabulary, universe: WebsiteUniverse,
                 dump_path=None) -> dict:
    """Evaluate unscrubbed and with every name-leaking event removed from the
    evaluation traces; returns both reports plus the accuracy delta."""
    plain = evaluate(model, traces, vocab, universe)
    scrubbed_traces = [scrub(t, universe) for t in traces]
    scrubbed = evaluate(model, scrubbed_traces, vocab, universe, dump_path=dump_path)
    return {
        "unscrubbed": plain,
        "scrubbed": scrubbed,
        "delta_accuracy": scrubbed.accuracy - plain.accuracy,
        "traces_emptied_by_scrub": sum(1 for t in scrubbed_traces if not t.events),
    }


# ---------------------------------------------------------------------------
# Checkpoint persistence: the whole training state round-trips, so a paused
# run resumes step-for-step identically.

def save_state(path, state: TrainState, metadata: dict) -> None:
    from . import checkpoint

    tensors = {}
    for name, arr in state.params.items():
        tensors[f"param.{name}"] = arr
        tensors[f"adam.m.{name}"] = state.adam.m[name]
        tensors[f"adam.v.{name}"] = state.adam.v[name]
    if state.best_params is not None:
        for name, arr in state.best_params.items():
            tensors[f"best.{name}"] = arr
    meta = dict(metadata)
    meta["train_state"] = {
        "kind": state.kind,
        "step": state.step,
        "best_loss": None if math.isinf(state.best_loss) else state.best_loss,
        "evals_without_improve": state.evals_without_improve,
        "finished": state.finished,
        "history": state.history,
        "adam": {"lr": state.adam.lr, "beta1": state.adam.beta1,
                 "beta2": state.adam.beta2, "eps": state.adam.eps, "t": state.adam.t},
        "rng_state": state.rng_state,
    }
    checkpoint.save_checkpoint(path, tensors, meta)


def load_state(path) -> tuple[TrainState, dict]:
    from . import checkpoint

    tensors, meta = checkpoint.load_checkpoint(path)
    info = meta["train_state"]
    params = {k[len("param."):]: v for k, v in tensors.items() if k.startswith("param.")}
    best = {k[len("best."):]: v for k, v in tensors.items() if k.startswith("best.")}
    adam = nn.AdamState(lr=info["adam"]["lr"], beta1=info["adam"]["beta1"],
                        beta2=info["adam"]["beta2"], eps=info["adam"]["eps"],
                        t=info["adam"]["t"])
    for name in params:
        adam.m[name] = tensors[f"adam.m.{name}"]
        adam.v[name] = tensors[f"adam.v.{name}"]
    state = TrainState(
        kind=info["kind"],
        params=params,
        adam=adam,
        rng_state=info["rng_state"],
        step=info["step"],
        best_loss=math.inf if info["best_loss"] is None else info["best_loss"],
        best_params=best or None,
        evals_without_improve=info["evals_without_improve"],
        finished=info["finished"],
        history=[tuple(h) for h in info["history"]],
    )
    return state, meta


def compare_reports(report_a: EvalReport, report_b: EvalReport) -> dict:
    """Paired t-test over the two reports' per-class accuracies."""
    if report_a.sites != report_b.sites:
        raise PipelineError("reports cover different class sets")
    acc_a = [row["accuracy"] for row in report_a.per_class()]
    acc_b = [row["accuracy"] for row in report_b.per_class()]
    result = paired_t_test(acc_a, acc_b)
    return {
        "metric": "per_class_accuracy",
        "t": result.t,
        "p": result.p,
        "df": result.df,
        "degenerate_variance": result.degenerate,
        "mean_a": float(np.mean(acc_a)),
        "mean_b": float(np.mean(acc_b)),
    }
