"""Model backends: image/text embeddings and multi-level perceptual features.

One backend per process, selected by the ``MODEL_NAME`` environment variable.
``stub`` is a deterministic seeded random-projection encoder used for protocol
tests and offline development; any other value is treated as a pretrained
CLIP checkpoint name loaded through ``transformers``, with perceptual
features served from a pretrained VGG16 through ``torchvision``.
"""

from __future__ import annotations

import hashlib
import io
from typing import Protocol

import numpy as np
from PIL import Image, UnidentifiedImageError


class ImageDecodeError(Exception):
    """The request body did not contain a decodable image."""


class BackendLoadError(Exception):
    """The configured model could not be loaded."""


def decode_image(data: bytes) -> np.ndarray:
    """PNG (or any PIL-readable) bytes to an RGB float array in [0, 1]."""
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgb = img.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float64) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"cannot decode image: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.size == 0:
        raise ImageDecodeError(f"unexpected image shape {arr.shape}")
    return arr


class Backend(Protocol):
    name: str
    feature_layers: tuple[str, ...]

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        """Unit-norm image embedding."""
        ...

    def embed_texts(self, prompts: list[str]) -> np.ndarray:
        """Unit-norm text embeddings, one row per prompt."""
        ...

    def features(self, img: np.ndarray) -> list[np.ndarray]:
        """Flattened per-level features, each scaled by 1/sqrt(element count)."""
        ...


def _seeded(*parts: object) -> np.random.Generator:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "big"))


def _block_mean(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = img.shape[:2]
    rows = np.minimum((np.arange(out_h + 1) * h) // out_h, h)
    cols = np.minimum((np.arange(out_w + 1) * w) // out_w, w)
    out = np.empty((out_h, out_w, img.shape[2]))
    for i in range(out_h):
        r0, r1 = rows[i], max(rows[i + 1], rows[i] + 1)
        for j in range(out_w):
            c0, c1 = cols[j], max(cols[j + 1], cols[j] + 1)
            out[i, j] = img[r0:r1, c0:c1].mean(axis=(0, 1))
    return out


class StubBackend:
    """Deterministic random-projection encoder for protocol-level testing."""

    name = "stub"
    feature_layers = ("pyramid_0", "pyramid_1", "pyramid_2", "pyramid_3")
    embed_dim = 64
    patch = 32

    def __init__(self, seed: int = 0):
        self.seed = seed
        rng = _seeded("stub-projection", seed)
        self._projection = rng.standard_normal((self.embed_dim, self.patch * self.patch * 3))

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        flat = _block_mean(img, self.patch, self.patch).ravel()
        vec = self._projection @ flat
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec

    def embed_texts(self, prompts: list[str]) -> np.ndarray:
        rows = []
        for prompt in prompts:
            vec = _seeded("stub-text", self.seed, prompt).standard_normal(self.embed_dim)
            rows.append(vec / np.linalg.norm(vec))
        return np.array(rows)

    def features(self, img: np.ndarray) -> list[np.ndarray]:
        levels = []
        current = _block_mean(img, self.patch, self.patch)
        for _ in self.feature_layers:
            flat = current.ravel()
            levels.append(flat / np.sqrt(flat.size))
            if current.shape[0] > 1:
                current = _block_mean(current, max(current.shape[0] // 2, 1),
                                      max(current.shape[1] // 2, 1))
        return levels


class ClipBackend:
    """Pretrained CLIP checkpoint via transformers plus VGG16 features.

    Heavy imports happen lazily at construction so the stub path never pulls
    in torch. Model access is serialized by the caller (one lock per app).
    """

    #: VGG16 feature-module indices and their conventional names.
    VGG_TAPS = ((3, "vgg16_relu1_2"), (8, "vgg16_relu2_2"),
                (15, "vgg16_relu3_3"), (22, "vgg16_relu4_3"))

    def __init__(self, model_name: str, device: str = "cpu"):
        self.name = model_name
        self.device = device
        self.feature_layers = tuple(name for _, name in self.VGG_TAPS)
        try:
            import torch
            from torchvision import models, transforms
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise BackendLoadError(f"model runtime unavailable: {exc}") from exc
        self._torch = torch
        try:
            self._clip = CLIPModel.from_pretrained(model_name).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(model_name)
            self._vgg = models.vgg16(weights=models.VGG16_Weights.DEFAULT)
            self._vgg = self._vgg.features.to(device).eval()
        except Exception as exc:
            raise BackendLoadError(f"cannot load {model_name!r}: {exc}") from exc
        self._vgg_prep = transforms.Compose([
            transforms.Resize((224, 224), antialias=True),
            transforms.Normalize(mean=[0.485, 0.456, 0.406],
                                 std=[0.229, 0.224, 0.225]),
        ])

    def _to_pil(self, img: np.ndarray):
        from PIL import Image as PilImage

        return PilImage.fromarray((img * 255.0).round().astype(np.uint8))

    def embed_image(self, img: np.ndarray) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            inputs = self._processor(images=self._to_pil(img), return_tensors="pt")
            inputs = {k: v.to(self.device) for k, v in inputs.items()}
            emb = self._clip.get_image_features(**inputs)[0]
            emb = emb / emb.norm()
        return emb.cpu().double().numpy()

    def embed_texts(self, prompts: list[str]) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            inputs = self._processor(text=prompts, return_tensors="pt", padding=True)
            inputs = {k: v.to(self.device) for k, v in inputs.items()}
            emb = self._clip.get_text_features(**inputs)
            emb = emb / emb.norm(dim=-1, keepdim=True)
        return emb.cpu().double().numpy()

    def features(self, img: np.ndarray) -> list[np.ndarray]:
        torch = self._torch
        with torch.no_grad():
            x = torch.from_numpy(img.transpose(2, 0, 1)).float().unsqueeze(0)
            x = self._vgg_prep(x).to(self.device)
            taps = dict(self.VGG_TAPS)
            levels = []
            for index, module in enumerate(self._vgg):
                x = module(x)
                if index in taps:
                    flat = x[0].flatten().cpu().double().numpy()
                    levels.append(flat / np.sqrt(flat.size))
                if index >= max(taps):
                    break
        return levels


def build_backend(model_name: str, device: str = "cpu") -> Backend:
    if model_name == "stub":
        return StubBackend()
    return ClipBackend(model_name, device=device)


def reference_distance(levels_a: list[np.ndarray], levels_b: list[np.ndarray]) -> float:
    """Server-side reference distance over returned feature levels.

    Mirrors the client convention exactly: sum over levels of the squared
    Euclidean distance divided by the level's element count.
    """
    total = 0.0
    for va, vb in zip(levels_a, levels_b):
        diff = np.asarray(va) - np.asarray(vb)
        total += float(diff @ diff) / diff.size
    return total
