"""Invariant suite behind ``jndscope selftest``."""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import torch

from jndscope.core import CodecSpec, ImageBuffer, LabelSequence, labels_from_jnd
from jndscope.evaluation import plcc, psnr
from jndscope.fusion import STAGE_COUNT, CSALayer, FusedStage, Fusion, attention
from jndscope.head import MLP, PatchAssessment, aggregate, bce_loss
from jndscope.patcher import extract_patches
from jndscope.search import SearchSpec, naive_search, window_search

ATTENTION_TOL = 1e-6
GRADIENT_EPS = 1e-4
GRADIENT_RTOL = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


def _attention_rows(seed: int = 0, instances: int = 1000) -> str:
    rng = np.random.default_rng(seed)
    worst_sum, worst_diff = 0.0, 0.0
    for _ in range(instances):
        nq, nk, d = (int(v) for v in rng.integers(1, 9, size=3))
        q, k, v = (rng.normal(0.0, 2.0, size=(n, d)) for n in (nq, nk, nk))
        out = attention(*(torch.from_numpy(a) for a in (q, k, v)), d).numpy()
        scores = q @ k.T / math.sqrt(d)
        weights = np.exp(scores - scores.max(axis=1, keepdims=True))
        weights /= weights.sum(axis=1, keepdims=True)
        worst_sum = max(worst_sum, float(np.abs(weights.sum(axis=1) - 1.0).max()))
        worst_diff = max(worst_diff, float(np.abs(out - weights @ v).max()))
    if worst_sum > ATTENTION_TOL or worst_diff > ATTENTION_TOL:
        raise AssertionError(f"row-sum error {worst_sum:.2e}, recomputation error {worst_diff:.2e}")
    return f"{instances} instances, max deviation {worst_diff:.1e}"


def brute_force_window(bits: Tuple[int, ...], lo: int, window: int, threshold: int):
    for start in range(len(bits) - window):
        if sum(bits[start : start + window + 1]) <= threshold:
            return lo + start
    return None


def _search_oracle(length: int = 12, max_window: int = 4) -> str:
    codec = CodecSpec(level_range=(1, length))
    checked = 0
    for bits in itertools.product((0, 1), repeat=length):
        labels = LabelSequence.from_bits(codec, bits)
        for window in range(max_window + 1):
            for threshold in range(window + 2):
                got = window_search(labels, SearchSpec(window=window, threshold=threshold))
                want = brute_force_window(bits, 1, window, threshold)
                if got.jnd_level != want:
                    raise AssertionError(
                        f"bits={''.join(map(str, bits))} w={window} theta={threshold}: "
                        f"{got.jnd_level} != {want}"
                    )
                checked += 1
    return f"{checked} sequence/spec pairs"


def _naive_round_trip() -> str:
    codec = CodecSpec()
    for target in codec.levels:
        got = naive_search(labels_from_jnd(target, codec)).jnd_level
        if got != target:
            raise AssertionError(f"target {target} came back as {got}")
    return f"{codec.size} targets"


def relative_gradient_error(
    loss_fn: Callable[[], torch.Tensor], tensor: torch.Tensor, eps: float = GRADIENT_EPS
) -> float:
    """Autograd gradient of ``loss_fn`` w.r.t. ``tensor`` against central differences."""
    tensor.grad = None
    loss_fn().backward()
    analytic = tensor.grad.detach().clone()
    numeric = torch.zeros_like(analytic)
    with torch.no_grad():
        flat, grad = tensor.view(-1), numeric.view(-1)
        for i in range(flat.numel()):
            original = float(flat[i])
            flat[i] = original + eps
            plus = float(loss_fn())
            flat[i] = original - eps
            minus = float(loss_fn())
            flat[i] = original
            grad[i] = (plus - minus) / (2.0 * eps)
    scale = max(float(numeric.norm()), 1e-12)
    return float((analytic - numeric).norm()) / scale


def _csa_gradient(seed: int = 0) -> str:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return _csa_gradient_seeded()


def _csa_gradient_seeded() -> str:
    layer = CSALayer(8, heads=1).double()
    query = torch.randn(4, 8, dtype=torch.float64)
    kv = torch.randn(4, 8, dtype=torch.float64)
    direction = torch.randn(4, 8, dtype=torch.float64)
    err_wq = relative_gradient_error(
        lambda: (layer(query, kv) * direction).sum(), layer.Wq.weight
    )

    fusion = Fusion((4,) * STAGE_COUNT, d_model=8, heads=1).double()
    tokens = [torch.randn(4, 8, dtype=torch.float64, requires_grad=True) for _ in range(STAGE_COUNT)]

    def cascade_loss() -> torch.Tensor:
        stages = [
            FusedStage(tokens=t, grid=(2, 2), scale=k, position_count=1)
            for k, t in enumerate(tokens, start=1)
        ]
        return (fusion.cascade(stages) * direction).sum()

    err_input = max(relative_gradient_error(cascade_loss, t) for t in tokens)
    worst = max(err_wq, err_input)
    if worst > GRADIENT_RTOL:
        raise AssertionError(f"relative gradient error {worst:.2e}")
    return f"W_q {err_wq:.1e}, cascade inputs {err_input:.1e}"


def _mlp_gradient(seed: int = 0) -> str:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        mlp = MLP(4, hidden=(4, 4)).double()
        tokens = torch.randn(4, 4, dtype=torch.float64)
    first = mlp.layers[0].weight
    error = relative_gradient_error(lambda: mlp(tokens) ** 2, first)
    if error > GRADIENT_RTOL:
        raise AssertionError(f"relative gradient error {error:.2e}")
    return f"relative error {error:.1e}"


def _aggregation_scale(seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 17))
        scores = rng.normal(0.0, 3.0, size=n)
        weights = rng.uniform(0.05, 5.0, size=n)
        base = aggregate([PatchAssessment(s, w) for s, w in zip(scores, weights)]).q_dist
        for c in (1e-3, 1.0, 1e3):
            scaled = aggregate([PatchAssessment(s, w * c) for s, w in zip(scores, weights)])
            worst = max(worst, abs(scaled.q_dist - base))
    if worst > 1e-9:
        raise AssertionError(f"q_dist moved by {worst:.2e} under weight scaling")
    return f"max drift {worst:.1e}"


def _patch_alignment(seed: int = 0, calls: int = 500) -> str:
    rng = np.random.default_rng(seed)
    for call in range(calls):
        s = int(rng.choice([4, 8, 16]))
        width, height = (int(v) for v in rng.integers(2 * s, 6 * s + 1, size=2))
        capacity = (width // s) * (height // s)
        n = int(rng.integers(1, capacity // 2 + 2))
        ref = ImageBuffer(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))
        dist = ImageBuffer(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))
        pairs = extract_patches(ref, dist, n, s, rng_seed=call)
        for a, b in itertools.combinations(pairs, 2):
            ax0, ay0, ax1, ay1 = a.rectangle()
            bx0, by0, bx1, by1 = b.rectangle()
            if ax0 < bx1 and bx0 < ax1 and ay0 < by1 and by0 < ay1:
                raise AssertionError(f"call {call}: patches {a.index} and {b.index} overlap")
        for pair in pairs:
            x, y = pair.origin
            if pair.ref_patch != ref.crop(x, y, s) or pair.dist_patch != dist.crop(x, y, s):
                raise AssertionError(f"call {call}: patch {pair.index} is misaligned")
    return f"{calls} extraction calls"


def _metric_closed_forms() -> str:
    r = plcc([1, 2, 3, 4], [1, 3, 2, 4])
    if abs(r - 0.8) > 1e-9:
        raise AssertionError(f"plcc {r}")
    loss = bce_loss([0.5, 0.5], [0, 1])
    if abs(loss - math.log(2.0)) > 1e-12:
        raise AssertionError(f"bce {loss}")
    ref = ImageBuffer(np.full((8, 8, 3), 100, dtype=np.uint8))
    dist = ImageBuffer(np.full((8, 8, 3), 116, dtype=np.uint8))
    value = psnr(ref, dist)
    if abs(value - 20.0 * math.log10(255.0 / 16.0)) > 1e-9:
        raise AssertionError(f"psnr {value}")
    return f"plcc {r:.4f}, bce {loss:.6f}, psnr {value:.3f} dB"


CHECKS: Tuple[Tuple[str, Callable[[], str]], ...] = (
    ("attention rows", _attention_rows),
    ("window search oracle", _search_oracle),
    ("naive round trip", _naive_round_trip),
    ("csa gradients", _csa_gradient),
    ("mlp gradients", _mlp_gradient),
    ("aggregation scale invariance", _aggregation_scale),
    ("patch disjointness", _patch_alignment),
    ("metric closed forms", _metric_closed_forms),
)


def run_selftest(progress_callback=None) -> List[CheckResult]:
    results: List[CheckResult] = []
    for position, (name, check) in enumerate(CHECKS, start=1):
        if progress_callback:
            progress_callback("start", position, len(CHECKS), name)
        started = time.perf_counter()
        try:
            detail, passed = check(), True
        except Exception as exc:  # noqa: BLE001 - every failure becomes a failed row
            detail, passed = f"{type(exc).__name__}: {exc}", False
        results.append(CheckResult(name, passed, detail, time.perf_counter() - started))
        if progress_callback:
            progress_callback("end", position, len(CHECKS), name)
    return results
