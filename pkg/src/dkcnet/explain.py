"""Grad-CAM heatmaps over the model's convolutional feature maps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib import colormaps

from .data.imaging import resize, save_image
from .model import DKCNet
from .tensor import backward, scale, select_channel, zero_grads

LAYERS = ("backbone_out", "attention_out", "se_out")


@dataclass
class Heatmap:
    grid: np.ndarray  # (H, W) in [0, 1]
    class_index: int
    layer: str
    source: str = ""
    degenerate: bool = False


def cam_from_features(features: np.ndarray, gradients: np.ndarray) -> np.ndarray:
    """ReLU(sum_c mean_spatial(grad_c) * feature_c) for (c, h, w) arrays."""
    weights = gradients.mean(axis=(1, 2))
    return np.maximum(np.tensordot(weights, features, axes=(0, 0)), 0.0)


def normalize_map(cam: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min-max to [0, 1]; a flat map becomes all zeros and is flagged."""
    lo, hi = float(cam.min()), float(cam.max())
    span = hi - lo
    if span <= 1e-12 * max(1.0, abs(hi)):
        return np.zeros_like(cam), True
    return (cam - lo) / span, False


def grad_cam(
    model: DKCNet,
    image: np.ndarray,
    class_index: int,
    target_layer: str = "se_out",
    logit_scale: float = 1.0,
    source: str = "",
) -> Heatmap:
    """Heatmap for one (3, H, W) image, upsampled to the model input size.

    The target is the pre-sigmoid logit of ``class_index`` (times
    ``logit_scale``), evaluated in eval mode.
    """
    if target_layer not in LAYERS:
        raise ValueError(f"unknown layer {target_layer!r}; choose from {LAYERS}")
    if not 0 <= class_index < model.config.num_classes:
        raise ValueError(f"class_index {class_index} out of range")
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[None]
    if img.shape[0] != 1:
        raise ValueError("grad_cam explains one image at a time")

    res = model.forward(img, mode="eval")
    if target_layer not in res.features:
        raise ValueError(f"layer {target_layer!r} is not present in this model (attention disabled?)")
    feat = res.features[target_layer]
    target = scale(select_channel(res.logits, class_index), logit_scale)
    zero_grads(model.trainable())
    backward(target)
    zero_grads(model.trainable())
    grads = feat.grad if feat.grad is not None else np.zeros_like(feat.data)

    cam = cam_from_features(feat.data[0], grads[0])
    size = model.config.input_size
    cam, degenerate = normalize_map(resize(cam, size, size))
    return Heatmap(cam, class_index, target_layer, source, degenerate)


def compare_layers(model: DKCNet, image: np.ndarray, class_index: int,
                   layers: tuple[str, str] = ("backbone_out", "se_out"), source: str = "") -> tuple[Heatmap, Heatmap]:
    """Backbone map next to the map refined by the attention path."""
    return tuple(grad_cam(model, image, class_index, layer, source=source) for layer in layers)


def heatmap_peak(heatmap: Heatmap) -> tuple[int, int]:
    return tuple(int(v) for v in np.unravel_index(np.argmax(heatmap.grid), heatmap.grid.shape))


def overlay(image_hwc: np.ndarray, heatmap: Heatmap, alpha: float = 0.4, cmap: str = "jet") -> np.ndarray:
    colored = colormaps[cmap](heatmap.grid)[..., :3]
    img = resize(image_hwc, *heatmap.grid.shape)
    return np.clip((1.0 - alpha) * img + alpha * colored, 0.0, 1.0)


def heatmap_filename(image_id: str, heatmap: Heatmap, suffix: str = "") -> str:
    return f"{image_id}_class{heatmap.class_index}_{heatmap.layer}{suffix}.png"


def write_heatmap(out_dir: str | Path, image_id: str, heatmap: Heatmap,
                  image_hwc: np.ndarray | None = None) -> list[Path]:
    """8-bit grayscale map, plus a color overlay when the source image is given."""
    out_dir = Path(out_dir)
    paths = [save_image(out_dir / heatmap_filename(image_id, heatmap), heatmap.grid)]
    if image_hwc is not None:
        paths.append(save_image(out_dir / heatmap_filename(image_id, heatmap, "_overlay"), overlay(image_hwc, heatmap)))
    return paths
