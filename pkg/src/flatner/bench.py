"""Inference throughput at several batch sizes."""
from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

from .tagger import FlatTagger

# batch-16 over batch-1 speedup reported for the original GPU implementation;
# carried in the report for comparison only
REFERENCE_SPEEDUP = 4.97


class ParameterDrift(RuntimeError):
    pass


def _run(tagger: FlatTagger, sentences: Sequence[Sequence[str]], batch_size: int, workers: int) -> int:
    if workers <= 1:
        return len(tagger.predict(sentences, batch_size))
    chunks = [sentences[i:i + batch_size] for i in range(0, len(sentences), batch_size)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        done = list(pool.map(lambda c: tagger.predict(c, batch_size), chunks))
    return sum(len(d) for d in done)


def bench(tagger: FlatTagger, sentences: Sequence[Sequence[str]], batch_sizes: Sequence[int] = (1, 16),
          trials: int = 5, warmup: int = 1, workers: int = 1) -> dict:
    """Median sentences/second per batch size over ``trials`` timed passes.

    ``warmup`` untimed passes run first for every batch size.  Raises
    :class:`ParameterDrift` if the parameters change during the run.
    """
    if trials < 1:
        raise ValueError("need at least one timed trial")
    sentences = [list(s) for s in sentences if len(s)]
    before = tagger.checksum()
    rows = []
    for bs in batch_sizes:
        for _ in range(warmup):
            _run(tagger, sentences, bs, workers)
        rates, processed = [], []
        for _ in range(trials):
            t0 = time.perf_counter()
            n = _run(tagger, sentences, bs, workers)
            rates.append(n / (time.perf_counter() - t0))
            processed.append(n)
        rows.append({
            "batch_size": bs,
            "sentences_per_sec": statistics.median(rates),
            "trials": rates,
            "sentences_per_trial": processed,
        })
    after = tagger.checksum()
    if after != before:
        raise ParameterDrift("model parameters changed during the benchmark")
    by_size = {r["batch_size"]: r["sentences_per_sec"] for r in rows}
    report = {
        "n_sentences": len(sentences),
        "workers": workers,
        "trials": trials,
        "warmup": warmup,
        "d_model": tagger.config.d_model,
        "rows": rows,
        "checksum": after,
        "reference_speedup": REFERENCE_SPEEDUP,
    }
    if 1 in by_size and 16 in by_size:
        report["speedup_16_vs_1"] = by_size[16] / by_size[1]
    return report
