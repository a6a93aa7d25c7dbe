"""Image/text encoders producing pooled 768-d embeddings.

Two backends:

- "clip": ViT-L/14 CLIP through huggingface transformers. The real path;
  needs the pretrained weights available locally or downloadable.
- "hashed": a deterministic, dependency-light stand-in (downscaled pixels
  for images, hashed character trigrams for text). No semantics, but stable
  byte-for-byte across runs, which is what the pipeline tests need.
"""

from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

EMBED_DIM = 768


class HashedEncoder:
    """Deterministic toy encoder; embeddings are unit-norm float32."""

    name = "hashed-v1"

    def encode_image(self, path) -> np.ndarray:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB").resize((16, 16), Image.BILINEAR), dtype=np.float64)
        flat = pixels.reshape(-1)  # 16*16*3 == 768
        flat = flat - flat.mean()
        norm = np.linalg.norm(flat)
        if norm == 0.0:  # uniform image: fall back to a hash of the pixel bytes
            return self._hash_vector(pixels.astype(np.uint8).tobytes())
        return (flat / norm).astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        padded = f"  {text.lower()}  "
        vec = np.zeros(EMBED_DIM, dtype=np.float64)
        for i in range(len(padded) - 2):
            digest = hashlib.sha256(padded[i : i + 3].encode("utf-8")).digest()
            index = int.from_bytes(digest[:4], "little") % EMBED_DIM
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[index] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            return self._hash_vector(text.encode("utf-8"))
        return (vec / norm).astype(np.float32)

    @staticmethod
    def _hash_vector(payload: bytes) -> np.ndarray:
        seed = int.from_bytes(hashlib.sha256(payload).digest()[:8], "little")
        vec = np.random.default_rng(seed).standard_normal(EMBED_DIM)
        return (vec / np.linalg.norm(vec)).astype(np.float32)


class ClipEncoder:
    """Pooled features from a pretrained CLIP checkpoint (ViT-L/14 default)."""

    def __init__(self, model_id: str = "openai/clip-vit-large-patch14"):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise RuntimeError(
                "the clip encoder needs torch and transformers; install the [clip] extra"
            ) from exc
        self.name = model_id
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_id).eval()
        self.processor = CLIPProcessor.from_pretrained(model_id)

    def encode_image(self, path) -> np.ndarray:
        with Image.open(path) as img:
            inputs = self.processor(images=img.convert("RGB"), return_tensors="pt")
        with self._torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return feats[0].numpy().astype(np.float32)

    def encode_text(self, text: str) -> np.ndarray:
        inputs = self.processor(text=[text], return_tensors="pt", padding=True, truncation=True)
        with self._torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return feats[0].numpy().astype(np.float32)


def make_encoder(kind: str, model_id: str | None = None):
    if kind == "hashed":
        return HashedEncoder()
    if kind == "clip":
        return ClipEncoder(model_id) if model_id else ClipEncoder()
    raise ValueError(f"unknown encoder {kind!r}; choose 'clip' or 'hashed'")
