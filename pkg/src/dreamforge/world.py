"""Procedural shapes world: renderer, captions, documents, and the oracle.

The world is 3 shapes x 3 colors x 4 quadrants = 36 scenes. Every image in
the corpus is a deterministic render of a Scene, so the corpus stores scene
parameters instead of pixels and the oracle classifier can judge any
generated image against ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue")
QUADRANTS = ("TL", "TR", "BL", "BR")
QUADRANT_WORDS = {
    "TL": "top-left",
    "TR": "top-right",
    "BL": "bottom-left",
    "BR": "bottom-right",
}
IMG_SIZE = 16
# (row, col) of each quadrant's top-left corner; quadrants are 8x8
_QUAD_ORIGIN = {"TL": (0, 0), "TR": (0, 8), "BL": (8, 0), "BR": (8, 8)}

FILLER_SENTENCES = (
    ("here", "is", "a", "picture"),
    ("look", "at", "this"),
    ("another", "example", "follows"),
)
VQA_KINDS = ("color", "shape", "position")
INSTRUCTION_WORDS = ("generate:", "answer:")


class WorldConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Scene:
    shape: str
    color: str
    quadrant: str

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise WorldConfigError(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise WorldConfigError(f"unknown color {self.color!r}")
        if self.quadrant not in QUADRANTS:
            raise WorldConfigError(f"unknown quadrant {self.quadrant!r}")

    def to_dict(self):
        return {"shape": self.shape, "color": self.color, "quadrant": self.quadrant}

    @staticmethod
    def from_dict(d):
        return Scene(d["shape"], d["color"], d["quadrant"])


@dataclass(frozen=True)
class TextSegment:
    words: tuple
    loss: bool = True  # CE applies to predicting these words


@dataclass(frozen=True)
class ImageSegment:
    scene: Scene
    predict_dream: bool = True  # CE applies to predicting this image's <dream>


@dataclass(frozen=True)
class Document:
    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise WorldConfigError("document needs at least one segment")
        if not any(isinstance(s, TextSegment) for s in self.segments):
            raise WorldConfigError("document needs at least one text segment")

    def scenes(self):
        return [s.scene for s in self.segments if isinstance(s, ImageSegment)]


def all_scenes():
    """All 36 scenes in lexicographic (shape, color, quadrant) order."""
    return [Scene(s, c, q) for s in SHAPES for c in COLORS for q in QUADRANTS]


def heldout_scenes():
    """Fixed evaluation split: every 7th scene (covers all attribute values)."""
    return [s for i, s in enumerate(all_scenes()) if i % 7 == 0]


def train_scenes():
    return [s for i, s in enumerate(all_scenes()) if i % 7 != 0]


def _shape_mask(shape):
    """8x8 boolean mask of the shape inside its quadrant."""
    mask = np.zeros((8, 8), dtype=bool)
    if shape == "square":
        mask[1:7, 1:7] = True
    elif shape == "triangle":
        # lower-left half (diagonal included) of the 6x6 block
        for r in range(1, 7):
            for c in range(1, 7):
                if r >= c:
                    mask[r, c] = True
    else:  # circle: radius 3 around the (4, 4) cell of the quadrant
        rr, cc = np.mgrid[0:8, 0:8]
        mask = (rr - 4) ** 2 + (cc - 4) ** 2 <= 9
    return mask


def render(scene: Scene) -> np.ndarray:
    """Deterministic 16x16x3 image in [-1, 1]; background is -1 everywhere."""
    img = np.full((IMG_SIZE, IMG_SIZE, 3), -1.0)
    r0, c0 = _QUAD_ORIGIN[scene.quadrant]
    mask = _shape_mask(scene.shape)
    ch = COLORS.index(scene.color)
    img[r0:r0 + 8, c0:c0 + 8, ch][mask] = 1.0
    return img


def caption(scene: Scene) -> list:
    return ["a", scene.color, scene.shape, "in", "the", QUADRANT_WORDS[scene.quadrant]]


# fill-count bands for the oracle, from exact enumeration of the renderer:
# square = 36 px, circle = 29 px, triangle = 21 px
_SQUARE_MIN = 34
_CIRCLE_MIN = 25
_TRIANGLE_MIN = 12

REJECT = "reject"


def oracle_classify(img: np.ndarray):
    """Invert the renderer; returns a Scene or REJECT.

    Foreground = any channel > 0. Quadrant by majority vote, color by the
    largest channel mean over the winning quadrant's foreground, shape by
    fill-count band. Any tie or too-small foreground rejects.
    """
    img = np.asarray(img)
    if img.shape != (IMG_SIZE, IMG_SIZE, 3):
        raise ValueError(f"expected {IMG_SIZE}x{IMG_SIZE}x3 image, got {img.shape}")
    fg = (img > 0).any(axis=2)
    if int(fg.sum()) < _TRIANGLE_MIN:
        return REJECT
    counts = {}
    for q, (r0, c0) in _QUAD_ORIGIN.items():
        counts[q] = int(fg[r0:r0 + 8, c0:c0 + 8].sum())
    best = max(counts.values())
    winners = [q for q in QUADRANTS if counts[q] == best]
    if len(winners) != 1:
        return REJECT
    quad = winners[0]
    r0, c0 = _QUAD_ORIGIN[quad]
    qfg = fg[r0:r0 + 8, c0:c0 + 8]
    n = int(qfg.sum())
    if n < _TRIANGLE_MIN:
        return REJECT
    means = img[r0:r0 + 8, c0:c0 + 8][qfg].mean(axis=0)
    order = np.sort(means)
    if order[-1] == order[-2]:
        return REJECT
    color = COLORS[int(np.argmax(means))]
    if n >= _SQUARE_MIN:
        shape = "square"
    elif n >= _CIRCLE_MIN:
        shape = "circle"
    else:
        shape = "triangle"
    return Scene(shape, color, quad)


def oracle_confidence(img: np.ndarray) -> float:
    """Deterministic [0, 1) cleanliness score for ranking samples.

    Product of the winning quadrant's vote share and the normalized margin
    between the top two channel means. 0 for rejected images.
    """
    if oracle_classify(img) == REJECT:
        return 0.0
    fg = (img > 0).any(axis=2)
    counts = {q: int(fg[r0:r0 + 8, c0:c0 + 8].sum()) for q, (r0, c0) in _QUAD_ORIGIN.items()}
    quad = max(QUADRANTS, key=lambda q: counts[q])
    share = counts[quad] / max(1, int(fg.sum()))
    r0, c0 = _QUAD_ORIGIN[quad]
    qfg = fg[r0:r0 + 8, c0:c0 + 8]
    means = np.sort(img[r0:r0 + 8, c0:c0 + 8][qfg].mean(axis=0))
    margin = float(means[-1] - means[-2]) / 2.0
    return min(share * margin, 1.0 - 1e-9)


# -- documents -----------------------------------------------------------------

@dataclass(frozen=True)
class CorpusConfig:
    min_images: int = 1
    max_images: int = 3
    filler_prob: float = 0.3
    scene_pool: str = "train"  # train | heldout | all

    def __post_init__(self):
        if not (1 <= self.min_images <= self.max_images):
            raise WorldConfigError(
                f"invalid image-count bounds [{self.min_images}, {self.max_images}]")
        if not (0.0 <= self.filler_prob <= 1.0):
            raise WorldConfigError(f"invalid filler probability {self.filler_prob}")
        if self.scene_pool not in ("train", "heldout", "all"):
            raise WorldConfigError(f"unknown scene pool {self.scene_pool!r}")

    def pool(self):
        return {"train": train_scenes, "heldout": heldout_scenes, "all": all_scenes}[
            self.scene_pool]()


def gen_document(seed, config: CorpusConfig = CorpusConfig()) -> Document:
    """One interleaved document; all images share the document's topic color."""
    rng = np.random.default_rng(seed)
    n_images = int(rng.integers(config.min_images, config.max_images + 1))
    topic = COLORS[int(rng.integers(len(COLORS)))]
    pool = [s for s in config.pool() if s.color == topic]
    segments = []
    for _ in range(n_images):
        scene = pool[int(rng.integers(len(pool)))]
        words = []
        if rng.random() < config.filler_prob:
            words += list(FILLER_SENTENCES[int(rng.integers(len(FILLER_SENTENCES)))])
        words += caption(scene)
        segments.append(TextSegment(tuple(words)))
        segments.append(ImageSegment(scene))
    return Document(tuple(segments))


def gen_corpus(seed, n_docs, config: CorpusConfig = CorpusConfig()):
    """Deterministic corpus: document i uses sub-seed derived from (seed, i)."""
    root = np.random.SeedSequence(seed)
    return [gen_document(child, config) for child in root.spawn(n_docs)]


def gen_vqa(scene: Scene, kind: str):
    """Question word list and single-word answer for one scene attribute."""
    if kind not in VQA_KINDS:
        raise WorldConfigError(f"unknown question kind {kind!r}")
    question = ["what", kind, "?"]
    if kind == "color":
        return question, scene.color
    if kind == "shape":
        return question, scene.shape
    return question, QUADRANT_WORDS[scene.quadrant]


# -- corpus file format ----------------------------------------------------------

CORPUS_HEADER = "#dreamforge-corpus v1"


def _segment_to_json(seg):
    if isinstance(seg, TextSegment):
        if seg.loss:
            return list(seg.words)
        return {"text": list(seg.words), "loss": False}
    d = {"scene": seg.scene.to_dict()}
    if not seg.predict_dream:
        d["predict_dream"] = False
    return d


def _segment_from_json(obj):
    if isinstance(obj, list):
        return TextSegment(tuple(obj))
    if "text" in obj:
        return TextSegment(tuple(obj["text"]), loss=obj.get("loss", True))
    return ImageSegment(Scene.from_dict(obj["scene"]),
                        predict_dream=obj.get("predict_dream", True))


def save_corpus(path, documents, config_hash=None):
    with open(path, "w", encoding="utf-8") as f:
        f.write(CORPUS_HEADER + "\n")
        if config_hash is not None:
            f.write(f"#config {config_hash}\n")
        for doc in documents:
            record = [_segment_to_json(seg) for seg in doc.segments]
            f.write(json.dumps(record, separators=(",", ":")) + "\n")


def load_corpus(path):
    docs = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != CORPUS_HEADER:
            raise ValueError(f"not a corpus file (header {header!r})")
        for line in f:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            record = json.loads(line)
            docs.append(Document(tuple(_segment_from_json(o) for o in record)))
    return docs


def corpus_words(documents):
    """Sorted set of every word appearing in the documents."""
    words = set()
    for doc in documents:
        for seg in doc.segments:
            if isinstance(seg, TextSegment):
                words.update(seg.words)
    return sorted(words)


def grammar_words():
    """The closed grammar: every word any generator in this package can emit."""
    words = set(["a", "in", "the"])
    words.update(COLORS)
    words.update(SHAPES)
    words.update(QUADRANT_WORDS.values())
    for sent in FILLER_SENTENCES:
        words.update(sent)
    words.update(["what", "?"])
    words.update(VQA_KINDS)
    words.update(INSTRUCTION_WORDS)
    return sorted(words)
