#!/usr/bin/env python3
"""Benchmark the CBOW training kernels: compiled extension vs NumPy fallback.

Builds a synthetic session corpus, trains the same configuration with each
available backend and reports tokens/second plus the numeric agreement of
the resulting embeddings after a short run.

Usage: python benchmarks/bench_cbow.py [--sessions 3000] [--epochs 5]
"""

import argparse
import time

import numpy as np

from comparetab.cbow import CbowConfig, train_cbow
from comparetab.kernels import available_backends, get_backend


def build_corpus(n_sessions: int, n_clusters: int, cluster_size: int, seed: int):
    rng = np.random.default_rng(seed)
    clusters = [
        [f"c{c:03d}p{i}" for i in range(cluster_size)] for c in range(n_clusters)
    ]
    sentences = []
    for s in range(n_sessions):
        members = clusters[s % n_clusters]
        length = int(rng.integers(6, 14))
        current = members[int(rng.integers(cluster_size))]
        sentence = [current]
        for _ in range(length - 1):
            current = [m for m in members if m != current][int(rng.integers(cluster_size - 1))]
            sentence.append(current)
        sentences.append(sentence)
    return sentences


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sessions", type=int, default=3000)
    parser.add_argument("--clusters", type=int, default=40)
    parser.add_argument("--cluster-size", type=int, default=8)
    parser.add_argument("--epochs", type=int, default=5)
    parser.add_argument("--dim", type=int, default=48)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    sentences = build_corpus(args.sessions, args.clusters, args.cluster_size, args.seed)
    n_tokens = sum(len(s) for s in sentences)
    config = CbowConfig(iterations=args.epochs, dim=args.dim, seed=args.seed)
    print(
        f"corpus: {args.sessions} sessions, {n_tokens} tokens, "
        f"{args.clusters * args.cluster_size} products; "
        f"{args.epochs} epochs, dim {args.dim}"
    )

    results = {}
    for name in available_backends():
        kernel = get_backend(name)
        started = time.perf_counter()
        vectors, losses = train_cbow(sentences, config, kernel=kernel)
        elapsed = time.perf_counter() - started
        rate = n_tokens * args.epochs / elapsed
        results[name] = (elapsed, rate, vectors, losses[-1])
        print(f"{name:>9}: {elapsed:7.2f}s  {rate/1e3:9.1f}k tokens/s  final loss {losses[-1]:.4f}")

    if len(results) == 2:
        speedup = results["pure"][0] / results["compiled"][0]
        pure_vecs, compiled_vecs = results["pure"][2], results["compiled"][2]
        worst = max(
            float(np.max(np.abs(pure_vecs[token] - compiled_vecs[token])))
            for token in pure_vecs
        )
        print(f"\nspeedup: {speedup:.1f}x (compiled over pure)")
        print(f"max |vector difference| after {args.epochs} epochs: {worst:.2e}")
    else:
        print("\ncompiled kernel not built; only the fallback was measured")


if __name__ == "__main__":
    main()
