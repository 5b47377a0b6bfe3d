"""NumPy fallback for the CBOW negative-sampling training loop.

Semantics mirror the compiled kernel in ``_cbow.pyx``: per center word the
candidate scores are taken against the pre-update output weights, context
means accumulate in float64 before rounding to float32, and scatter-adds
accumulate duplicate indices. Results agree with the compiled kernel up to
floating-point summation order.
"""

from __future__ import annotations

import numpy as np

# Logits are clipped before the sigmoid; both backends share the constant so
# saturation happens at the same point.
LOGIT_CLIP = 60.0

BACKEND_NAME = "pure"


def train_epoch(
    syn0: np.ndarray,
    syn1neg: np.ndarray,
    tokens: np.ndarray,
    offsets: np.ndarray,
    session_order: np.ndarray,
    negatives: np.ndarray,
    window: int,
    lr0: float,
    lr_min: float,
    total_updates: int,
    done_before: int,
) -> tuple[float, int, int]:
    """One pass over the corpus; updates ``syn0``/``syn1neg`` in place.

    Returns (loss_sum, n_trained, n_processed): summed negative-sampling
    objective over trained center words, the count of center words with a
    non-empty context, and the count of center positions consumed (the
    learning-rate decay clock).
    """
    loss_sum = 0.0
    trained = 0
    processed = 0
    n_negative = negatives.shape[1]
    for s in session_order:
        sess = tokens[offsets[s] : offsets[s + 1]]
        n = len(sess)
        for pos in range(n):
            lr = lr0 * (1.0 - (done_before + processed) / total_updates)
            if lr < lr_min:
                lr = lr_min
            row = processed
            processed += 1
            lo = max(0, pos - window)
            hi = min(n, pos + window + 1)
            if hi - lo <= 1:
                continue
            ctx = np.concatenate([sess[lo:pos], sess[pos + 1 : hi]])
            target = int(sess[pos])
            cand = [target]
            for j in range(n_negative):
                neg = int(negatives[row, j])
                if neg != target:
                    cand.append(neg)
            cand_arr = np.asarray(cand, dtype=np.int64)

            h = syn0[ctx].mean(axis=0, dtype=np.float64).astype(np.float32)
            out = syn1neg[cand_arr].astype(np.float64)  # pre-update copy
            x = np.clip(out @ h.astype(np.float64), -LOGIT_CLIP, LOGIT_CLIP)
            f = 1.0 / (1.0 + np.exp(-x))
            labels = np.zeros(len(cand_arr))
            labels[0] = 1.0
            g = lr * (labels - f)

            # -log sigma(x_pos) - sum log sigma(-x_neg), in stable form
            loss_sum += np.logaddexp(0.0, -x[0]) + np.logaddexp(0.0, x[1:]).sum()
            trained += 1

            neu1e = (g @ out).astype(np.float32)
            np.add.at(syn1neg, cand_arr, (g[:, None] * h.astype(np.float64)).astype(np.float32))
            np.add.at(syn0, ctx, neu1e)
    return loss_sum, trained, processed
