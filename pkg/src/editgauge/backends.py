"""Model-backend interfaces, deterministic mocks, and the Frechet distance.

Real embedding/segmentation backends are named adapters resolved from a
registry; the mocks here are deterministic stand-ins used for tests, demos,
and offline runs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Protocol

import cv2
import numpy as np

from .records import DetectionResult


class BackendError(RuntimeError):
    """Raised when a backend call fails or an adapter cannot be resolved."""


class Embedder(Protocol):
    """Joint text-image embedder; both methods return unit vectors."""

    def embed_text(self, text: str) -> np.ndarray: ...

    def embed_image(self, raster: np.ndarray) -> np.ndarray: ...


class Perceptual(Protocol):
    """Perceptual distance between two rasters (0 for identical inputs)."""

    def distance(self, raster_a: np.ndarray, raster_b: np.ndarray) -> float: ...


class PatchEmbedder(Protocol):
    """Self-supervised image embedder returning unit vectors."""

    def embed(self, raster: np.ndarray) -> np.ndarray: ...


class Segmenter(Protocol):
    """Instance segmentation over one class.

    ``detect`` returns the highest-confidence candidate (or None);
    ``detect_all`` returns every candidate, even low-confidence ones.
    """

    def detect(self, raster: np.ndarray, class_name: str) -> Optional[DetectionResult]: ...

    def detect_all(self, raster: np.ndarray, class_name: str) -> list[DetectionResult]: ...


class FeatureExtractor(Protocol):
    """Fixed-dimension feature vectors for image-quality statistics."""

    def features(self, raster: np.ndarray) -> np.ndarray: ...


class VqaBackend(Protocol):
    """Yes/no visual question answering."""

    def ask(self, raster: Optional[np.ndarray], question: str) -> str: ...


class LlmBackend(Protocol):
    """Stateless text-in/text-out completion."""

    def complete(self, prompt: str) -> str: ...


# ---------------------------------------------------------------------------
# Frechet distance / FID
# ---------------------------------------------------------------------------

def _sqrtm_psd(mat: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Matrix square root of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues within ``-tol`` of zero are clamped to 0; anything below
    raises (the matrix is not PSD).
    """
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.abs(vals).max())) if vals.size else 1.0
    if vals.min() < -tol * scale:
        raise BackendError(f"matrix is not PSD (min eigenvalue {vals.min()})")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(mu1: np.ndarray, cov1: np.ndarray,
                     mu2: np.ndarray, cov2: np.ndarray) -> float:
    """Frechet distance between two Gaussians.

    d^2 = ||mu1 - mu2||^2 + Tr(cov1 + cov2 - 2 (cov1 cov2)^{1/2}),
    with the cross term computed as Tr of the square root of the
    symmetrized product sqrt(cov1) cov2 sqrt(cov1). Small negative noise
    is clamped to keep the result nonnegative.
    """
    mu1 = np.asarray(mu1, dtype=np.float64)
    mu2 = np.asarray(mu2, dtype=np.float64)
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise BackendError(
            f"dimension mismatch: mu {mu1.shape}/{mu2.shape}, "
            f"cov {cov1.shape}/{cov2.shape}"
        )
    if cov1.shape != (mu1.size, mu1.size):
        raise BackendError(f"cov shape {cov1.shape} does not match mean {mu1.shape}")

    sqrt1 = _sqrtm_psd(cov1)
    inner = sqrt1 @ cov2 @ sqrt1
    inner = (inner + inner.T) / 2.0
    vals = np.linalg.eigh(inner)[0]
    scale = max(1.0, float(np.abs(vals).max())) if vals.size else 1.0
    if vals.min() < -1e-6 * scale:
        raise BackendError(f"cross term is not PSD (min eigenvalue {vals.min()})")
    tr_cross = float(np.sqrt(np.clip(vals, 0.0, None)).sum())

    diff = mu1 - mu2
    dist = float(diff @ diff) + float(np.trace(cov1) + np.trace(cov2)) - 2.0 * tr_cross
    return max(0.0, dist)


def fid_between_sets(features_a: np.ndarray, features_b: np.ndarray) -> float:
    """FID of the sample Gaussians fitted to two feature sets."""
    a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise BackendError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    dim = a.shape[1]
    need = dim + 1
    for name, feats in (("a", a), ("b", b)):
        if feats.shape[0] < need:
            raise BackendError(
                f"feature set {name} has {feats.shape[0]} rows; "
                f"needs at least {need} for a full-rank covariance"
            )
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    return frechet_distance(mu_a, cov_a, mu_b, cov_b)


# ---------------------------------------------------------------------------
# Deterministic mock backends
# ---------------------------------------------------------------------------

def _raster_digest(raster: np.ndarray) -> str:
    arr = np.ascontiguousarray(raster)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(str(arr.dtype).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def _digest_to_unit_vector(digest: bytes, dim: int) -> np.ndarray:
    seed = int.from_bytes(digest[:8], "big")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


class HashEmbedder:
    """Maps content digests to deterministic unit vectors (mock CLIP/DINO)."""

    def __init__(self, dim: int = 16):
        self.dim = dim

    def embed_text(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(b"text:" + text.encode("utf-8")).digest()
        return _digest_to_unit_vector(digest, self.dim)

    def embed_image(self, raster: np.ndarray) -> np.ndarray:
        digest = hashlib.sha256(
            b"image:" + _raster_digest(raster).encode()
        ).digest()
        return _digest_to_unit_vector(digest, self.dim)

    # PatchEmbedder interface
    def embed(self, raster: np.ndarray) -> np.ndarray:
        return self.embed_image(raster)


class PixelPerceptual:
    """RMSE of unit-range pixels as a stand-in perceptual distance."""

    def distance(self, raster_a: np.ndarray, raster_b: np.ndarray) -> float:
        a = np.asarray(raster_a, dtype=np.float64)
        b = np.asarray(raster_b, dtype=np.float64)
        if a.shape != b.shape:
            raise BackendError(f"raster shapes differ: {a.shape} vs {b.shape}")
        if np.asarray(raster_a).dtype == np.uint8:
            a = a / 255.0
        if np.asarray(raster_b).dtype == np.uint8:
            b = b / 255.0
        return float(np.sqrt(np.mean((a - b) ** 2)))


class PatchStatsExtractor:
    """Cheap feature extractor: per-cell channel means on a fixed grid."""

    def __init__(self, grid: int = 4):
        self.grid = grid

    def features(self, raster: np.ndarray) -> np.ndarray:
        arr = np.asarray(raster, dtype=np.float64)
        if arr.dtype == np.uint8:
            arr = arr / 255.0
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        feats = []
        ys = np.linspace(0, h, self.grid + 1, dtype=int)
        xs = np.linspace(0, w, self.grid + 1, dtype=int)
        for i in range(self.grid):
            for j in range(self.grid):
                cell = arr[ys[i]:ys[i + 1], xs[j]:xs[j + 1]]
                feats.append(cell.mean(axis=(0, 1)))
        return np.concatenate(feats)


class OracleSegmenter:
    """Reads ground-truth side-car masks keyed by ids via a digest index.

    Layout under ``mask_dir``::

        index.json              digest -> image key
        <key>/meta.json         class -> [{"file": ..., "confidence": ...}]
        <key>/<class>_<i>.png   binary mask rasters, one per instance

    A missing side-car models "object not found".
    """

    def __init__(self, mask_dir):
        self.mask_dir = Path(mask_dir)
        index_path = self.mask_dir / "index.json"
        if not index_path.exists():
            raise BackendError(f"mask index {index_path} not found")
        self._index = json.loads(index_path.read_text(encoding="utf-8"))

    def detect_all(self, raster: np.ndarray, class_name: str
                   ) -> list[DetectionResult]:
        key = self._index.get(_raster_digest(raster))
        if key is None:
            return []
        meta_path = self.mask_dir / key / "meta.json"
        if not meta_path.exists():
            return []
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        out = []
        for entry in meta.get(class_name, []):
            mask_img = cv2.imread(str(self.mask_dir / key / entry["file"]),
                                  cv2.IMREAD_GRAYSCALE)
            if mask_img is None:
                continue
            mask = mask_img > 127
            if not mask.any():
                continue
            ys, xs = np.nonzero(mask)
            bbox = (float(xs.min()), float(ys.min()),
                    float(xs.max() - xs.min() + 1),
                    float(ys.max() - ys.min() + 1))
            out.append(DetectionResult(class_name=class_name, mask=mask,
                                       bbox=bbox,
                                       confidence=float(entry["confidence"])))
        return out

    def detect(self, raster: np.ndarray, class_name: str) -> Optional[DetectionResult]:
        candidates = self.detect_all(raster, class_name)
        if not candidates:
            return None
        return max(enumerate(candidates),
                   key=lambda pair: (pair[1].confidence, -pair[0]))[1]


def write_oracle_mask(mask_dir, key: str, class_name: str,
                      mask: np.ndarray, confidence: float,
                      raster: Optional[np.ndarray] = None) -> None:
    """Register one side-car instance mask under the given image key."""
    mask_dir = Path(mask_dir)
    entry_dir = mask_dir / key
    entry_dir.mkdir(parents=True, exist_ok=True)
    meta_path = entry_dir / "meta.json"
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    instances = meta.setdefault(class_name, [])
    filename = f"{class_name.replace(' ', '_')}_{len(instances)}.png"
    cv2.imwrite(str(entry_dir / filename),
                (np.asarray(mask, dtype=bool) * 255).astype(np.uint8))
    instances.append({"file": filename, "confidence": float(confidence)})
    meta_path.write_text(json.dumps(meta, sort_keys=True), encoding="utf-8")
    if raster is not None:
        register_oracle_raster(mask_dir, key, raster)


def register_oracle_raster(mask_dir, key: str, raster: np.ndarray) -> None:
    """Map a raster's content digest to its mask key in the index."""
    mask_dir = Path(mask_dir)
    mask_dir.mkdir(parents=True, exist_ok=True)
    index_path = mask_dir / "index.json"
    index = json.loads(index_path.read_text(encoding="utf-8")) if index_path.exists() else {}
    index[_raster_digest(raster)] = key
    index_path.write_text(json.dumps(index, sort_keys=True), encoding="utf-8")


class ScriptedVqa:
    """Deterministic VQA mock.

    Unscripted objects get answers consistent with an unoccluded, fully
    visible object; ``script`` maps an object name to its answers in
    question order.
    """

    _NEGATIVE = ("hidden", "covered", "outside", "blocked")

    def __init__(self, script: Optional[dict[str, list[str]]] = None):
        self.script = {k: list(v) for k, v in (script or {}).items()}
        self._cursor: dict[str, int] = {}

    def ask(self, raster: Optional[np.ndarray], question: str) -> str:
        for name, answers in self.script.items():
            if name in question and answers:
                i = self._cursor.get(name, 0)
                self._cursor[name] = (i + 1) % len(answers)
                return answers[i]
        if any(word in question for word in self._NEGATIVE):
            return "no"
        return "yes"


class ScriptedLlm:
    """Returns canned responses in order; raises when exhausted."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.calls = 0

    def complete(self, prompt: str) -> str:
        if self.calls >= len(self.responses):
            raise BackendError("scripted LLM ran out of responses")
        out = self.responses[self.calls]
        self.calls += 1
        return out


class BackendSet:
    """The handles one evaluation run needs, resolved from the registry."""

    def __init__(self, embedder, perceptual, patch_embedder, segmenter,
                 feature_extractor, names: Optional[dict[str, str]] = None):
        self.embedder = embedder
        self.perceptual = perceptual
        self.patch_embedder = patch_embedder
        self.segmenter = segmenter
        self.feature_extractor = feature_extractor
        self.names = dict(names or {})


_ADAPTERS = {
    "hash_embedder": lambda params: HashEmbedder(**params),
    "pixel_perceptual": lambda params: PixelPerceptual(**params),
    "oracle_segmenter": lambda params: OracleSegmenter(**params),
    "patch_stats": lambda params: PatchStatsExtractor(**params),
    "scripted_vqa": lambda params: ScriptedVqa(**params),
}


def resolve_adapter(name: str, registry: dict[str, dict]) -> object:
    """Instantiate a named backend from a registry entry."""
    if name not in registry:
        raise BackendError(f"backend {name!r} not in registry")
    entry = registry[name]
    adapter = entry.get("adapter")
    if adapter not in _ADAPTERS:
        raise BackendError(f"unknown adapter id {adapter!r} for backend {name!r}")
    return _ADAPTERS[adapter](dict(entry.get("params", {})))


def load_backend_set(registry_path, mask_dir=None) -> BackendSet:
    """Build a BackendSet from a registry config file.

    The registry maps role names (embedder, perceptual, patch_embedder,
    segmenter, feature_extractor) to adapter entries. A ``mask_dir``
    override fills the oracle segmenter's parameter when given.
    """
    registry = json.loads(Path(registry_path).read_text(encoding="utf-8"))
    if mask_dir is not None and "segmenter" in registry:
        registry["segmenter"].setdefault("params", {})["mask_dir"] = str(mask_dir)
    names = {role: registry[role].get("adapter", "?") for role in registry}
    return BackendSet(
        embedder=resolve_adapter("embedder", registry),
        perceptual=resolve_adapter("perceptual", registry),
        patch_embedder=resolve_adapter("patch_embedder", registry),
        segmenter=resolve_adapter("segmenter", registry),
        feature_extractor=resolve_adapter("feature_extractor", registry),
        names=names,
    )


def mock_backend_set(mask_dir) -> BackendSet:
    """The all-mock backend set used for offline runs and tests."""
    embedder = HashEmbedder()
    return BackendSet(
        embedder=embedder,
        perceptual=PixelPerceptual(),
        patch_embedder=embedder,
        segmenter=OracleSegmenter(mask_dir),
        feature_extractor=PatchStatsExtractor(),
        names={
            "embedder": "hash_embedder",
            "perceptual": "pixel_perceptual",
            "patch_embedder": "hash_embedder",
            "segmenter": "oracle_segmenter",
            "feature_extractor": "patch_stats",
        },
    )
