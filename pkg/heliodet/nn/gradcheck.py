"""
Finite-difference gradient checker

Every analytic gradient is compared against a central difference

    numeric = (f(w + eps) - f(w - eps)) / (w_plus - w_minus)

where w_plus/w_minus are the perturbed float32 values actually stored (so the
f32 rounding of the step does not bias the quotient). The scalar objective is
sum(output * R) accumulated in float64 for a fixed random R. The error of one
entry is |a - n| / max(1, |a|, |n|) and a case passes when the largest error
is <= TOLERANCE.

Piecewise-linear layers (leaky_relu, maxpool2d) and the responsible-slot
choice of the detection loss have kinks. An entry whose +/- perturbation
changes the activation pattern is not differentiable at the probed scale and
is skipped; skipped entries are counted in the result.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from heliodet.nn.layers import DTYPE, Conv2d, Flatten, Layer, LeakyReLU, Linear, MaxPool2d, Sigmoid
from heliodet.utils.rng import derive_rng

logger = logging.getLogger(__name__)

EPSILON = 1e-3
TOLERANCE = 1e-3
DEFAULT_SEEDS = 20

LAYER_CASES = ("conv2d", "maxpool2d", "leaky_relu", "sigmoid", "flatten", "linear")
LOSS_CASES = ("yolo_loss_logits", "yolo_loss_anchor_logits", "yolo_loss_network")

# (objective value, activation pattern)
Evaluation = Tuple[float, bytes]


@dataclass
class GradcheckResult:
    case: str
    seed: int
    max_error: float
    checked: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.max_error <= TOLERANCE


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a = np.abs(np.asarray(analytic, dtype=np.float64))
    n = np.abs(np.asarray(numeric, dtype=np.float64))
    diff = np.abs(np.asarray(analytic, dtype=np.float64) - np.asarray(numeric, dtype=np.float64))
    return diff / np.maximum(1.0, np.maximum(a, n))


def kink_pattern(layers: Sequence[Layer]) -> bytes:
    """Signs of leaky inputs and pool argmaxes from each layer's forward cache"""
    parts = []
    for layer in layers:
        if isinstance(layer, LeakyReLU) and layer._cache is not None:
            parts.append(np.packbits(layer._cache).tobytes())
        elif isinstance(layer, MaxPool2d) and layer._cache is not None:
            parts.append(layer._cache[1].tobytes())
    return b"".join(parts)


def compare_gradients(
    evaluate: Callable[[], Evaluation],
    targets: Dict[str, Tuple[np.ndarray, np.ndarray]],
    case: str,
    seed: int,
    eps: float = EPSILON,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None
) -> GradcheckResult:
    """
    Probe analytic gradients against central differences

    Args:
        evaluate: Recomputes (objective, kink pattern) from the current arrays
        targets: Name -> (float32 array perturbed in place, its analytic gradient)
        case: Label for the result
        seed: Seed that produced the case
        eps: Perturbation size
        max_entries: Probe at most this many entries per array (random subset)
        rng: Generator for the subset choice

    Returns:
        GradcheckResult with the largest relative error over probed entries
    """
    _, baseline = evaluate()
    max_error, checked, skipped = 0.0, 0, 0

    for name, (array, analytic) in targets.items():
        flat_indices = np.arange(array.size)
        if max_entries is not None and array.size > max_entries:
            flat_indices = np.sort((rng or np.random.default_rng(0)).choice(array.size, max_entries, replace=False))
        for flat in flat_indices:
            index = np.unravel_index(int(flat), array.shape)
            original = array[index]
            plus = DTYPE(original + DTYPE(eps))
            minus = DTYPE(original - DTYPE(eps))

            array[index] = plus
            f_plus, pattern_plus = evaluate()
            array[index] = minus
            f_minus, pattern_minus = evaluate()
            array[index] = original

            if pattern_plus != baseline or pattern_minus != baseline:
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (float(plus) - float(minus))
            error = float(relative_error(analytic[index], numeric))
            if error > max_error:
                max_error = error
                logger.debug(f"{case}[seed {seed}] {name}{index}: analytic {float(analytic[index]):.6g} numeric {numeric:.6g}")
            checked += 1

    return GradcheckResult(case, seed, max_error, checked, skipped)


def _layer_case(kind: str, rng: np.random.Generator) -> Tuple[Layer, np.ndarray]:
    n = 2
    if kind == "conv2d":
        kernel = int(rng.choice([1, 2, 3]))
        stride = int(rng.choice([1, 2]))
        pad = int(rng.integers(0, kernel // 2 + 1))
        out_h, out_w = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        h = (out_h - 1) * stride + kernel - 2 * pad
        w = (out_w - 1) * stride + kernel - 2 * pad
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        layer = Conv2d(c_in, c_out, kernel, stride, pad)
        layer.params["weight"][...] = rng.uniform(-1.0, 1.0, layer.params["weight"].shape)
        layer.params["bias"][...] = rng.normal(size=c_out)
        x = rng.normal(size=(n, c_in, h, w))
    elif kind == "maxpool2d":
        size = int(rng.choice([1, 2, 3]))
        stride = int(rng.integers(1, size + 1))
        out_h, out_w = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = (out_h - 1) * stride + size, (out_w - 1) * stride + size
        layer = MaxPool2d(size, stride)
        # Distinct values spaced well beyond 2 * eps keep every argmax stable
        count = n * 2 * h * w
        x = (rng.permutation(count) * 0.01 - count * 0.005).reshape(n, 2, h, w)
    elif kind == "leaky_relu":
        layer = LeakyReLU(float(rng.uniform(0.05, 0.5)))
        x = rng.normal(size=(n, 3, 4))
        x = np.sign(x) * (np.abs(x) + 0.01)
    elif kind == "sigmoid":
        layer = Sigmoid()
        x = rng.normal(scale=2.0, size=(n, 5))
    elif kind == "flatten":
        layer = Flatten()
        x = rng.normal(size=(n, 2, 3, 2))
    elif kind == "linear":
        f_in, f_out = int(rng.integers(1, 7)), int(rng.integers(1, 6))
        layer = Linear(f_in, f_out)
        layer.params["weight"][...] = rng.uniform(-1.0, 1.0, layer.params["weight"].shape)
        layer.params["bias"][...] = rng.normal(size=f_out)
        x = rng.normal(size=(n, f_in))
    else:
        raise ValueError(f"unknown layer case {kind}")
    return layer, np.ascontiguousarray(x, dtype=DTYPE)


def check_layer(kind: str, seed: int) -> GradcheckResult:
    """Input and parameter gradients of one randomly shaped layer"""
    rng = derive_rng(seed, "gradcheck", kind)
    layer, x = _layer_case(kind, rng)
    out_shape = layer.forward(x, cache=True).shape
    upstream = rng.normal(size=out_shape)

    layer.zero_grads()
    grad_x = layer.backward(upstream.astype(DTYPE))
    targets = {"input": (x, grad_x)}
    for key, value in layer.params.items():
        targets[key] = (value, layer.grads[key].copy())

    def evaluate() -> Evaluation:
        out = layer.forward(x, cache=True)
        return float(np.sum(out.astype(np.float64) * upstream)), kink_pattern([layer])

    return compare_gradients(evaluate, targets, kind, seed)


def _random_annotations(rng: np.random.Generator, count: int, num_classes: int):
    from heliodet.services.labels import Annotation
    from heliodet.utils.geometry import BBox

    annots = []
    for _ in range(count):
        w, h = rng.uniform(0.1, 0.6, size=2)
        cx = rng.uniform(w / 2, 1 - w / 2)
        cy = rng.uniform(h / 2, 1 - h / 2)
        annots.append(Annotation(int(rng.integers(0, num_classes)), BBox(float(cx), float(cy), float(w), float(h))))
    return annots


def check_loss_logits(seed: int, anchors: bool = False) -> GradcheckResult:
    """yolo_loss gradient with respect to the raw prediction values (S=2, B=2, C=2)"""
    from heliodet.models.config_models import DetectorConfig, LayerSpec
    from heliodet.services import detector

    case = "yolo_loss_anchor_logits" if anchors else "yolo_loss_logits"
    rng = derive_rng(seed, "gradcheck", case)
    cfg = DetectorConfig(
        S=2, B=2, C=2, input_size=8,
        backbone=[LayerSpec(kind="flatten"), LayerSpec(kind="linear", out_features=2 * 2 * 12)],
        anchors=[(0.3, 0.4), (0.5, 0.25)] if anchors else None,
    )
    target = detector.encode_targets(_random_annotations(rng, int(rng.integers(1, 4)), 2), cfg)
    pred = rng.normal(scale=1.5, size=cfg.output_length).astype(DTYPE)

    _, grad = detector.yolo_loss_with_grad(pred, target, cfg)

    def evaluate() -> Evaluation:
        loss = detector.yolo_loss(pred, target, cfg)
        return loss.total, detector.assign_responsible(pred, target, cfg).tobytes()

    return compare_gradients(evaluate, {"pred": (pred, grad)}, case, seed)


def check_loss_network(seed: int) -> GradcheckResult:
    """yolo_loss gradient with respect to every parameter of a tiny network (S=2, B=1, C=1)"""
    from heliodet.models.config_models import DetectorConfig, LayerSpec
    from heliodet.services import detector

    case = "yolo_loss_network"
    rng = derive_rng(seed, "gradcheck", case)
    backbone = [
        LayerSpec(kind="conv2d", out_channels=2, kernel=3, stride=1, pad=1),
        LayerSpec(kind="leaky_relu", slope=0.1),
        LayerSpec(kind="maxpool2d", size=2, stride=2),
        LayerSpec(kind="flatten"),
        LayerSpec(kind="linear", out_features=2 * 2 * 6),
    ]
    cfg = DetectorConfig(S=2, B=1, C=1, input_size=4, backbone=backbone)
    net = detector.build_network(cfg, seed, channels=1)
    x = rng.uniform(0.0, 1.0, size=(2, 1, 4, 4)).astype(DTYPE)
    targets = [detector.encode_targets(_random_annotations(rng, int(rng.integers(0, 3)), 1), cfg) for _ in range(2)]

    out = net.forward(x)
    _, grad_out = detector.batch_loss(out, targets, cfg)
    net.zero_grads()
    net.backward(grad_out)
    probe = {name: (value, grad.copy()) for (name, value), (_, grad) in zip(net.named_params(), net.named_grads())}

    def evaluate() -> Evaluation:
        out = net.forward(x)
        loss, _ = detector.batch_loss(out, targets, cfg)
        responsible = b"".join(detector.assign_responsible(o, t, cfg).tobytes() for o, t in zip(out, targets))
        return loss.total, kink_pattern(net.layers) + responsible

    return compare_gradients(evaluate, probe, case, seed)


def run_case(case: str, seed: int) -> GradcheckResult:
    if case in LAYER_CASES:
        return check_layer(case, seed)
    if case == "yolo_loss_logits":
        return check_loss_logits(seed)
    if case == "yolo_loss_anchor_logits":
        return check_loss_logits(seed, anchors=True)
    if case == "yolo_loss_network":
        return check_loss_network(seed)
    raise ValueError(f"unknown gradcheck case {case}")


def run_suite(seeds: int = DEFAULT_SEEDS, base_seed: int = 0, cases: Optional[Sequence[str]] = None) -> List[GradcheckResult]:
    """Every case over seeds base_seed .. base_seed + seeds - 1"""
    results = []
    for case in cases or LAYER_CASES + LOSS_CASES:
        case_results = [run_case(case, base_seed + i) for i in range(seeds)]
        worst = max(r.max_error for r in case_results)
        status = "✓" if all(r.passed for r in case_results) else "FAILED"
        logger.info(f"gradcheck {case}: worst relative error {worst:.2e} over {seeds} seeds {status}")
        results.extend(case_results)
    return results
