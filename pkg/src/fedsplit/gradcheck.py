"""Central finite-difference checks for every layer and the composed model.

All checks run in float64: perturb each parameter entry by +/-eps, rerun the
forward pass, and compare (f(x+eps) - f(x-eps)) / 2eps against the tape's
gradient.  The forward reruns never touch the backward machinery, so this is
an independent oracle for it.
"""

from __future__ import annotations

import numpy as np

from .models import ModelSpec, hhn_logits, init_model
from .rng import SplitMix64, derive_seed
from .tensor import Tape, Tensor, softmax_cross_entropy

EPS = 1e-5


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = float(np.max(np.abs(a)) + np.max(np.abs(b)) + 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def numeric_grad(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of scalar-valued f() with respect to every entry
    of x (mutated in place and restored)."""
    flat = x.reshape(-1)
    out = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = f()
        flat[i] = orig - eps
        down = f()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * eps)
    return out.reshape(x.shape)


def check_tensor_grad(f_loss, tensor: Tensor, sample: int = 0,
                      seed: int = 0) -> float:
    """Compare tape gradient with finite differences on a few entries.

    sample == 0 checks every entry; otherwise `sample` entries drawn from a
    seeded stream (enough dims to catch broken backward rules, cheap enough
    to run over the composed model).
    """
    flat = tensor.data.reshape(-1)
    n = flat.size
    if sample and sample < n:
        rng = SplitMix64(derive_seed(seed, "gradcheck-entries"))
        indices = sorted({rng.next_below(n) for _ in range(sample)})
    else:
        indices = list(range(n))
    analytic = tensor.grad.reshape(-1)
    worst = 0.0
    scale = float(np.max(np.abs(analytic)) + 1e-8)
    for i in indices:
        orig = flat[i]
        flat[i] = orig + EPS
        up = f_loss()
        flat[i] = orig - EPS
        down = f_loss()
        flat[i] = orig
        numeric = (up - down) / (2.0 * EPS)
        worst = max(worst, abs(numeric - analytic[i]) / max(scale, abs(numeric), 1e-8))
    return worst


def composed_model_check(seed: int, spec: ModelSpec | None = None,
                         sample_entries: int = 4) -> dict[str, float]:
    """Whole-model gradient check on a 2-sample batch; returns per-tensor
    worst relative errors."""
    if spec is None:
        spec = ModelSpec(embedding_dim=6, lstm_hidden=3,
                         conn_filters=((1, 2), (2, 3)), cnn_heights=(2, 3),
                         cnn_filters=2, fasttext_dim=4)
    rng = SplitMix64(derive_seed(seed, "gradcheck-data"))
    vocab = 9
    title_ids = np.array([[2 + rng.next_below(vocab - 2) for _ in range(3)]
                          for _ in range(2)])
    content_ids = np.array([[2 + rng.next_below(vocab - 2) for _ in range(4)]
                            for _ in range(2)])
    title_ids[1, 2] = 0
    content_ids[1, 3] = 0
    title_lens = np.array([3, 2])
    content_lens = np.array([4, 3])
    labels = np.array([rng.next_below(2), rng.next_below(2)])

    params = init_model(spec, derive_seed(seed, "gradcheck-params"),
                        title_vocab=vocab, content_vocab=vocab,
                        trainable_embeddings=True, dtype=np.float64)

    def loss_value() -> float:
        tape = Tape()
        logits = hhn_logits(tape, params, title_ids, title_lens,
                            content_ids, content_lens)
        loss, _ = softmax_cross_entropy(tape, logits, labels)
        return float(loss.data)

    tape = Tape()
    logits = hhn_logits(tape, params, title_ids, title_lens,
                        content_ids, content_lens)
    loss, _ = softmax_cross_entropy(tape, logits, labels)
    params.zero_grads()
    tape.backward(loss)

    report = {}
    for name, tensor in params.trainable_named():
        report[name] = check_tensor_grad(loss_value, tensor,
                                         sample=sample_entries, seed=seed)
    return report


def run_gradcheck(seeds: int = 3, threshold: float = 1e-3,
                  verbose: bool = False) -> int:
    """Composed-model checks over several seeds; returns the failure count."""
    failures = 0
    for seed in range(seeds):
        report = composed_model_check(seed)
        worst_name = max(report, key=report.get)
        worst = report[worst_name]
        ok = worst < threshold
        failures += 0 if ok else 1
        if verbose:
            status = "ok" if ok else "FAIL"
            print(f"seed {seed}: worst rel err {worst:.2e} ({worst_name}) [{status}]")
    if verbose:
        print(f"gradcheck: {seeds - failures}/{seeds} seeds passed")
    return failures
