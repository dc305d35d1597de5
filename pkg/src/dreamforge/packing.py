"""Documents -> packed token sequences with slot maps and loss masks.

Every image segment expands to the fixed block

    <dream> DSLOT*Q <dream/> <IMG> ISLOT*L <IMG/>

where the DSLOT positions are later overridden with the learnable queries
and the ISLOT positions with the projected patch embeddings of that image.
The cross-entropy mask is true exactly where the *target* token is a plain
word, <dream>, or <eos>; structurally forced tokens and placeholders carry
no CE loss. Documents built for instruction tuning can switch off the loss
on prompt words (TextSegment.loss) and on <dream> prediction for images
that act as inputs (ImageSegment.predict_dream).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import world
from .codec import Vocabulary
from .world import Document, ImageSegment, TextSegment


class PackError(ValueError):
    pass


class DocumentTooLongError(PackError):
    pass


@dataclass
class PackedSequence:
    ids: np.ndarray            # (T,) int64
    target_ids: np.ndarray     # (T,) int64, ids shifted left by one, PAD at the end
    ce_mask: np.ndarray        # (T,) bool
    images: list               # K rendered images, order of appearance
    dream_anchors: list        # K entries: (image index, np.ndarray of Q positions)
    dslot_pos: np.ndarray      # (K, Q) positions of dream slots
    islot_pos: np.ndarray      # (K, L) positions of image-embedding slots

    @property
    def length(self):
        return len(self.ids)

    @property
    def n_images(self):
        return len(self.images)

    def embed_override(self):
        """position -> ("dream", image k, query q) or ("image", image k, patch l)."""
        out = {}
        for k in range(self.n_images):
            for q, p in enumerate(self.dslot_pos[k]):
                out[int(p)] = ("dream", k, q)
            for l, p in enumerate(self.islot_pos[k]):
                out[int(p)] = ("image", k, l)
        return out


def pack(doc: Document, vocab: Vocabulary, q_queries: int, l_patches: int,
         max_len: int = 512) -> PackedSequence:
    if q_queries < 1 or l_patches < 1:
        raise PackError("query and patch counts must be >= 1")
    ids = [vocab.bos]
    loss_flag = [False]  # per position: CE may apply when this token is the *target*
    images = []
    dslot_pos = []
    islot_pos = []
    for seg in doc.segments:
        if isinstance(seg, TextSegment):
            for w in seg.words:
                ids.append(vocab.id_of(w))
                loss_flag.append(seg.loss)
        elif isinstance(seg, ImageSegment):
            ids.append(vocab.dream)
            loss_flag.append(seg.predict_dream)
            start = len(ids)
            ids.extend([vocab.dslot] * q_queries)
            loss_flag.extend([False] * q_queries)
            dslot_pos.append(np.arange(start, start + q_queries))
            ids.append(vocab.dream_end)
            loss_flag.append(False)
            ids.append(vocab.img)
            loss_flag.append(False)
            start = len(ids)
            ids.extend([vocab.islot] * l_patches)
            loss_flag.extend([False] * l_patches)
            islot_pos.append(np.arange(start, start + l_patches))
            ids.append(vocab.img_end)
            loss_flag.append(False)
            images.append(world.render(seg.scene))
        else:
            raise PackError(f"unknown segment type {type(seg).__name__}")
    ids.append(vocab.eos)
    loss_flag.append(True)
    if len(ids) > max_len:
        raise DocumentTooLongError(
            f"packed document is {len(ids)} tokens, limit {max_len}")

    ids = np.array(ids, dtype=np.int64)
    targets = np.concatenate([ids[1:], [vocab.pad]])
    ce_mask = np.zeros(len(ids), dtype=bool)
    ce_mask[:-1] = np.array(loss_flag[1:], dtype=bool)
    k = len(images)
    return PackedSequence(
        ids=ids,
        target_ids=targets,
        ce_mask=ce_mask,
        images=images,
        dream_anchors=[(i, dslot_pos[i]) for i in range(k)],
        dslot_pos=np.array(dslot_pos, dtype=np.int64).reshape(k, q_queries),
        islot_pos=np.array(islot_pos, dtype=np.int64).reshape(k, l_patches),
    )


def unpack_layout(seq: PackedSequence, vocab: Vocabulary):
    """Recover the document skeleton: list of word-lists and "image" markers.

    Raises PackError naming the first position whose token violates the
    image-block layout.
    """
    q = seq.dslot_pos.shape[1] if seq.n_images else None
    l = seq.islot_pos.shape[1] if seq.n_images else None
    ids = list(seq.ids)
    if not ids or ids[0] != vocab.bos:
        raise PackError("position 0: expected <bos>")
    skeleton = []
    words = []
    p = 1

    def expect(token_id, pos, name):
        if pos >= len(ids) or ids[pos] != token_id:
            raise PackError(f"position {pos}: expected {name}")

    while p < len(ids):
        t = ids[p]
        if t == vocab.eos:
            p += 1
            break
        if t == vocab.pad:
            raise PackError(f"position {p}: <pad> before <eos>")
        if t == vocab.dream:
            if words:
                skeleton.append(words)
                words = []
            if q is None:
                raise PackError(f"position {p}: image block in sequence without images")
            p += 1
            for _ in range(q):
                expect(vocab.dslot, p, "dream slot")
                p += 1
            expect(vocab.dream_end, p, "<dream/>")
            p += 1
            expect(vocab.img, p, "<IMG>")
            p += 1
            for _ in range(l):
                expect(vocab.islot, p, "image slot")
                p += 1
            expect(vocab.img_end, p, "<IMG/>")
            p += 1
            skeleton.append("image")
        elif t in (vocab.dslot, vocab.islot, vocab.dream_end, vocab.img,
                   vocab.img_end, vocab.bos):
            raise PackError(f"position {p}: unexpected {vocab.words[t]}")
        else:
            words.append(vocab.words[t])
            p += 1
    else:
        raise PackError(f"position {len(ids) - 1}: sequence ended without <eos>")
    if words:
        skeleton.append(words)
    for rest in range(p, len(ids)):
        if ids[rest] != vocab.pad:
            raise PackError(f"position {rest}: content after <eos>")
    return skeleton


def layout_of(doc: Document):
    """The skeleton unpack_layout should recover for `doc`."""
    skeleton = []
    words = []
    for seg in doc.segments:
        if isinstance(seg, TextSegment):
            words.extend(seg.words)
        else:
            if words:
                skeleton.append(words)
                words = []
            skeleton.append("image")
    if words:
        skeleton.append(words)
    return skeleton


@dataclass
class PackedBatch:
    """Padded stack of PackedSequences plus flattened slot index arrays."""
    ids: np.ndarray            # (B, T)
    target_ids: np.ndarray     # (B, T)
    ce_mask: np.ndarray        # (B, T) bool
    images: np.ndarray         # (K_total, 16, 16, 3); empty (0,16,16,3) if none
    dslot_b: np.ndarray        # (K_total*Q,) batch index of each dream slot
    dslot_t: np.ndarray        # (K_total*Q,) position of each dream slot
    islot_b: np.ndarray        # (K_total*L,)
    islot_t: np.ndarray        # (K_total*L,)
    n_images: int
    q_queries: int
    l_patches: int

    @property
    def batch_size(self):
        return self.ids.shape[0]


def collate(seqs, vocab: Vocabulary, q_queries: int, l_patches: int) -> PackedBatch:
    max_t = max(s.length for s in seqs)
    b = len(seqs)
    ids = np.full((b, max_t), vocab.pad, dtype=np.int64)
    targets = np.full((b, max_t), vocab.pad, dtype=np.int64)
    ce_mask = np.zeros((b, max_t), dtype=bool)
    images, db, dt, ib, it = [], [], [], [], []
    for i, s in enumerate(seqs):
        ids[i, :s.length] = s.ids
        targets[i, :s.length] = s.target_ids
        ce_mask[i, :s.length] = s.ce_mask
        for k in range(s.n_images):
            images.append(s.images[k])
            db.append(np.full(q_queries, i))
            dt.append(s.dslot_pos[k])
            ib.append(np.full(l_patches, i))
            it.append(s.islot_pos[k])
    n_images = len(images)
    stack = (np.stack(images) if images
             else np.zeros((0, world.IMG_SIZE, world.IMG_SIZE, 3)))
    cat = lambda parts: (np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64))
    return PackedBatch(
        ids=ids, target_ids=targets, ce_mask=ce_mask, images=stack,
        dslot_b=cat(db).astype(np.int64), dslot_t=cat(dt).astype(np.int64),
        islot_b=cat(ib).astype(np.int64), islot_t=cat(it).astype(np.int64),
        n_images=n_images, q_queries=q_queries, l_patches=l_patches,
    )
