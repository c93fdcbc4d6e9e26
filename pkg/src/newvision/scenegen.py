"""Procedural scene corpus: images, captions, QA pairs, statements.

The symbolic SceneSpec is the single source of truth. The renderer, the
caption/QA/statement generators, and the predicate evaluator are all pure
functions of it, so every label in a generated corpus can be re-verified
mechanically. Scenes hold one to three objects on a 4x4 grid of 8x8-pixel
cells; within a scene no two objects share a cell and no two share the same
(color, shape) pair, which keeps descriptors unambiguous and keeps captions
distinguishable after horizontal flips.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import errors
from .vocab import Vocab, normalize

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow")
SIZES = ("small", "large")
GRID = 4
CELL = 8
IMAGE_SIZE = GRID * CELL

COLOR_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}

NUMBER_WORDS = ("zero", "one", "two", "three")


@dataclass(frozen=True)
class SceneObject:
    shape: str
    color: str
    row: int
    col: int
    size: str


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple
    seed: int

    def to_dict(self) -> dict:
        return {"objects": [vars(o).copy() for o in self.objects]}

    @classmethod
    def from_objects(cls, objects, seed: int = 0) -> "SceneSpec":
        ordered = tuple(sorted(objects, key=lambda o: (o.row, o.col)))
        return cls(objects=ordered, seed=seed)


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    kind: str


@dataclass(frozen=True)
class Statement:
    text: str
    truth: bool


def generate_scene(seed: int) -> SceneSpec:
    """Deterministic random scene: 1-3 objects, distinct cells, distinct
    (color, shape) pairs."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    cells = rng.choice(GRID * GRID, size=n, replace=False)
    combos = rng.choice(len(SHAPES) * len(COLORS), size=n, replace=False)
    sizes = rng.integers(0, 2, size=n)
    objects = [
        SceneObject(shape=SHAPES[int(c) // len(COLORS)],
                    color=COLORS[int(c) % len(COLORS)],
                    row=int(cell) // GRID, col=int(cell) % GRID,
                    size=SIZES[int(s)])
        for cell, c, s in zip(cells, combos, sizes)
    ]
    return SceneSpec.from_objects(objects, seed=int(seed))


def render_scene(scene: SceneSpec) -> np.ndarray:
    """32x32x3 float32 image in [0,1]: white background, one shape per
    occupied cell. Large shapes fill the 8x8 cell, small ones the centered
    4x4 box. Colors are exact 0/1 components so a PPM round trip is exact."""
    img = np.ones((IMAGE_SIZE, IMAGE_SIZE, 3), dtype=np.float32)
    for obj in scene.objects:
        color = np.array(COLOR_RGB[obj.color], dtype=np.float32)
        s = CELL if obj.size == "large" else CELL // 2
        off = 0 if obj.size == "large" else CELL // 4
        by, bx = obj.row * CELL + off, obj.col * CELL + off
        c_mid = (s - 1) / 2.0
        for r in range(s):
            for c in range(s):
                if obj.shape == "square":
                    inside = True
                elif obj.shape == "circle":
                    inside = (r - c_mid) ** 2 + (c - c_mid) ** 2 \
                        <= (s / 2.0) ** 2
                else:  # triangle: apex on top, full-width base at bottom
                    inside = abs(c - c_mid) <= (r + 1) / 2.0
                if inside:
                    img[by + r, bx + c] = color
    return img


def cell_center(obj: SceneObject) -> tuple[int, int]:
    """Pixel coordinates guaranteed to lie inside the rendered shape."""
    return obj.row * CELL + CELL // 2, obj.col * CELL + CELL // 2


def describe(obj: SceneObject) -> str:
    return f"a {obj.size} {obj.color} {obj.shape}"


def _relation_between(a: SceneObject, b: SceneObject) -> str:
    # vertical wins when rows differ; cells are distinct so same-row
    # objects always differ in column
    if a.row != b.row:
        return "above" if a.row < b.row else "below"
    return "left of" if a.col < b.col else "right of"


def caption_of(scene: SceneSpec, seed: int) -> str:
    """One templated caption, deterministic in (scene, seed).

    Object choice is keyed only on flip-invariant data (object count, seed,
    and a sort that ignores columns), so the caption of a mirrored scene
    describes the same objects with left/right exchanged.
    """
    objs = sorted(scene.objects,
                  key=lambda o: (o.row, o.shape, o.color, o.size))
    if len(objs) == 1:
        return describe(objs[0])
    rng = np.random.default_rng([seed, len(objs)])
    i, j = (int(k) for k in rng.choice(len(objs), size=2, replace=False))
    a, b = objs[i], objs[j]
    return f"{describe(a)} {_relation_between(a, b)} {describe(b)}"


# --- caption / statement grammar and predicate evaluator ---

def _parse_descriptor(words: list[str], i: int) -> Optional[tuple[dict, int]]:
    if (i + 3 < len(words) and words[i] == "a" and words[i + 1] in SIZES
            and words[i + 2] in COLORS and words[i + 3] in SHAPES):
        return ({"size": words[i + 1], "color": words[i + 2],
                 "shape": words[i + 3]}, i + 4)
    return None


def parse_caption(text: str) -> Optional[dict]:
    """Parse 'a SIZE COLOR SHAPE [REL a SIZE COLOR SHAPE]' or None."""
    words = normalize(text).split()
    first = _parse_descriptor(words, 0)
    if first is None:
        return None
    d1, i = first
    if i == len(words):
        return {"objects": [d1], "relation": None}
    if words[i] in ("above", "below"):
        rel, i = words[i], i + 1
    elif words[i] in ("left", "right") and i + 1 < len(words) \
            and words[i + 1] == "of":
        rel, i = words[i], i + 2
    else:
        return None
    second = _parse_descriptor(words, i)
    if second is None or second[1] != len(words):
        return None
    return {"objects": [d1, second[0]], "relation": rel}


def _matches(obj: SceneObject, d: dict) -> bool:
    return (obj.size == d["size"] and obj.color == d["color"]
            and obj.shape == d["shape"])


def _relation_holds(a: SceneObject, b: SceneObject, rel: str) -> bool:
    if rel == "above":
        return a.row < b.row
    if rel == "below":
        return a.row > b.row
    if rel == "left":
        return a.col < b.col
    if rel == "right":
        return a.col > b.col
    return False


def evaluate_text(scene: SceneSpec, text: str) -> Optional[bool]:
    """Truth of a caption-grammar sentence against the scene, or None when
    the sentence does not parse."""
    parsed = parse_caption(text)
    if parsed is None:
        return None
    return evaluate_parsed(scene, parsed)


def evaluate_parsed(scene: SceneSpec, parsed: dict) -> bool:
    ds = parsed["objects"]
    if parsed["relation"] is None:
        return any(_matches(o, ds[0]) for o in scene.objects)
    return any(
        _matches(a, ds[0]) and _matches(b, ds[1])
        and _relation_holds(a, b, parsed["relation"])
        for a in scene.objects for b in scene.objects if a is not b)


# --- question generation and symbolic answering ---

def _color_count(scene: SceneSpec, color: str) -> int:
    return sum(1 for o in scene.objects if o.color == color)


def _position_words(obj: SceneObject) -> str:
    vertical = "top" if obj.row < GRID // 2 else "bottom"
    horizontal = "left" if obj.col < GRID // 2 else "right"
    return f"{vertical} {horizontal}"


def qa_pairs_of(scene: SceneSpec) -> list[QAPair]:
    """One QA pair per kind where the kind applies to this scene."""
    objs = scene.objects
    pairs = []

    color0 = objs[0].color
    pairs.append(QAPair(f"how many {color0} shapes",
                        NUMBER_WORDS[_color_count(scene, color0)], "count"))

    shape_counts = {s: sum(1 for o in objs if o.shape == s) for s in SHAPES}
    unique_shape = next((o.shape for o in objs
                         if shape_counts[o.shape] == 1), None)
    if unique_shape is not None:
        answer = next(o.color for o in objs if o.shape == unique_shape)
        pairs.append(QAPair(f"what color is the {unique_shape}",
                            answer, "color"))

    color_counts = {c: _color_count(scene, c) for c in COLORS}
    unique_color = next((o.color for o in objs
                         if color_counts[o.color] == 1), None)
    if unique_color is not None:
        answer = next(o.shape for o in objs if o.color == unique_color)
        pairs.append(QAPair(f"what shape is the {unique_color} object",
                            answer, "shape"))

    last = objs[-1]
    pairs.append(QAPair(f"where is the {last.color} {last.shape}",
                        _position_words(last), "position"))

    if len(objs) >= 2:
        other = next((o.color for o in objs[1:] if o.color != color0), None)
        if other is None:
            other = next(c for c in COLORS if c != color0)
        answer = "yes" if color_counts[color0] > _color_count(scene, other) \
            else "no"
        pairs.append(QAPair(
            f"are there more {color0} shapes than {other} shapes",
            answer, "compare"))
    return pairs


def answer_for(scene: SceneSpec, question: str) -> Optional[str]:
    """Symbolic answer to a template question, or None when the question
    does not parse or has no well-defined answer for this scene."""
    words = normalize(question).split()
    objs = scene.objects
    if (len(words) == 4 and words[:2] == ["how", "many"]
            and words[2] in COLORS and words[3] == "shapes"):
        return NUMBER_WORDS[_color_count(scene, words[2])]
    if (len(words) == 5 and words[:4] == ["what", "color", "is", "the"]
            and words[4] in SHAPES):
        matching = [o for o in objs if o.shape == words[4]]
        return matching[0].color if len(matching) == 1 else None
    if (len(words) == 6 and words[:4] == ["what", "shape", "is", "the"]
            and words[4] in COLORS and words[5] == "object"):
        matching = [o for o in objs if o.color == words[4]]
        return matching[0].shape if len(matching) == 1 else None
    if (len(words) == 5 and words[:3] == ["where", "is", "the"]
            and words[3] in COLORS and words[4] in SHAPES):
        matching = [o for o in objs
                    if o.color == words[3] and o.shape == words[4]]
        return _position_words(matching[0]) if len(matching) == 1 else None
    if (len(words) == 8 and words[:3] == ["are", "there", "more"]
            and words[3] in COLORS and words[4] == "shapes"
            and words[5] == "than" and words[6] in COLORS
            and words[7] == "shapes"):
        return "yes" if _color_count(scene, words[3]) \
            > _color_count(scene, words[6]) else "no"
    return None


# --- statements ---

_OPPOSITE_REL = {"above": "below", "below": "above",
                 "left of": "right of", "right of": "left of"}


def _render_statement(mentions: list[dict], relation: Optional[str]) -> str:
    parts = [f"a {m['size']} {m['color']} {m['shape']}" for m in mentions]
    if relation is None:
        return parts[0]
    return f"{parts[0]} {relation} {parts[1]}"


def statement_of(scene: SceneSpec, want_truth: bool, seed: int,
                 budget: int = 20) -> Statement:
    """A caption-grammar claim with the requested truth value.

    True statements read attributes straight off the scene. False ones take
    a true statement and apply one perturbation (a color swap or a relation
    swap), keeping only candidates the evaluator confirms are false.
    """
    rng = np.random.default_rng([seed, int(want_truth)])
    objs = list(scene.objects)
    use_pair = len(objs) >= 2 and bool(rng.integers(0, 2))
    if use_pair:
        i, j = (int(k) for k in rng.choice(len(objs), size=2, replace=False))
        mentions = [dict(size=objs[k].size, color=objs[k].color,
                         shape=objs[k].shape) for k in (i, j)]
        relation = _relation_between(objs[i], objs[j])
    else:
        k = int(rng.integers(0, len(objs)))
        mentions = [dict(size=objs[k].size, color=objs[k].color,
                         shape=objs[k].shape)]
        relation = None

    if want_truth:
        text = _render_statement(mentions, relation)
        assert evaluate_text(scene, text) is True
        return Statement(text=text, truth=True)

    for _ in range(budget):
        cand_mentions = [dict(m) for m in mentions]
        cand_relation = relation
        if relation is not None and bool(rng.integers(0, 2)):
            cand_relation = _OPPOSITE_REL[relation]
        else:
            which = int(rng.integers(0, len(cand_mentions)))
            current = cand_mentions[which]["color"]
            alternatives = [c for c in COLORS if c != current]
            cand_mentions[which]["color"] = \
                alternatives[int(rng.integers(0, len(alternatives)))]
        text = _render_statement(cand_mentions, cand_relation)
        if evaluate_text(scene, text) is False:
            return Statement(text=text, truth=False)
    raise errors.CannotFalsify(
        f"no tried perturbation made a false statement for scene "
        f"{scene.seed}")


# --- augmentation ---

def augment(image: np.ndarray, scene: SceneSpec, policy: str,
            seed: int) -> tuple[np.ndarray, SceneSpec]:
    if policy == "identity":
        return image, scene
    if policy == "hflip":
        flipped = np.ascontiguousarray(image[:, ::-1, :])
        objects = [SceneObject(shape=o.shape, color=o.color, row=o.row,
                               col=GRID - 1 - o.col, size=o.size)
                   for o in scene.objects]
        return flipped, SceneSpec.from_objects(objects, seed=scene.seed)
    if policy == "jitter":
        rng = np.random.default_rng(seed)
        noise = rng.uniform(-10 / 255, 10 / 255, image.shape)
        jittered = np.clip(image + noise, 0.0, 1.0).astype(np.float32)
        return jittered, scene
    raise errors.UnknownPolicy(f"unknown augmentation policy {policy!r}")


# --- PPM image files ---

def write_ppm(path, image: np.ndarray) -> None:
    arr = np.round(np.asarray(image) * 255).astype(np.uint8)
    h, w = arr.shape[0], arr.shape[1]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + arr.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":  # comment line
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if pos == start:
            raise errors.BadImageShape(f"{path}: truncated PPM header")
        fields.append(data[start:pos])
    if fields[0] != b"P6":
        raise errors.BadImageShape(f"{path}: not a binary P6 PPM")
    w, h, maxval = (int(f) for f in fields[1:])
    pos += 1  # single whitespace byte after maxval
    raster = data[pos:pos + w * h * 3]
    if len(raster) != w * h * 3:
        raise errors.BadImageShape(f"{path}: truncated pixel data")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float32) / np.float32(maxval)


# --- corpus construction ---

@dataclass
class SceneRecord:
    id: int
    split: str
    scene: SceneSpec
    caption: str
    qa: list
    statements: list
    image_path: str


def _record_to_json(rec: SceneRecord) -> str:
    payload = {
        "id": rec.id,
        "split": rec.split,
        "objects": [vars(o).copy() for o in rec.scene.objects],
        "caption": rec.caption,
        "qa": [{"q": p.question, "a": p.answer, "kind": p.kind}
               for p in rec.qa],
        "statements": [{"text": s.text, "truth": s.truth}
                       for s in rec.statements],
        "image": rec.image_path,
    }
    return json.dumps(payload, separators=(",", ":"))


def _combos_in(scene: SceneSpec) -> set:
    return {(o.shape, o.color) for o in scene.objects}


def reserved_combos(seed: int) -> set:
    """The two (shape, color) pairs held out of the train split."""
    rng = np.random.default_rng([seed, 17])
    picks = rng.choice(len(SHAPES) * len(COLORS), size=2, replace=False)
    return {(SHAPES[int(p) // len(COLORS)], COLORS[int(p) % len(COLORS)])
            for p in picks}


def build_corpus(out_dir, n_train: int, n_eval: int, seed: int) -> dict:
    """Write scenes.jsonl, img/*.ppm, and vocab.txt under out_dir.

    Kept scenes are mutually distinguishable: caption strings are unique
    across the corpus and, stronger, each caption is true of exactly one
    kept scene. That makes in-batch contrastive/matching labels and
    retrieval ground truth exact rather than merely probable. The eval
    split is the novel-composition holdout: every eval scene contains a
    reserved (shape, color) combo that never occurs in train.
    """
    if n_train < 1 or n_eval < 1:
        raise errors.ConfigError("n_train and n_eval must both be >= 1")
    out = Path(out_dir)
    (out / "img").mkdir(parents=True, exist_ok=True)
    reserved = reserved_combos(seed)

    records: list[SceneRecord] = []
    parsed_captions: list[dict] = []
    counter = 0
    budget = 400 * (n_train + n_eval) + 1000
    while len(records) < n_train + n_eval:
        if counter >= budget:
            raise errors.CorpusExhausted(
                f"generated {counter} candidates but kept only "
                f"{len(records)}")
        scene_seed = seed * 1_000_003 + counter
        counter += 1
        scene = generate_scene(scene_seed)
        building_train = len(records) < n_train
        overlap = _combos_in(scene) & reserved
        if building_train and overlap:
            continue
        if not building_train and not overlap:
            continue
        caption = caption_of(scene, seed=scene_seed)
        parsed = parse_caption(caption)
        if any(caption == r.caption for r in records):
            continue
        if any(evaluate_parsed(r.scene, parsed) for r in records):
            continue
        if any(evaluate_parsed(scene, p) for p in parsed_captions):
            continue
        idx = len(records)
        rec = SceneRecord(
            id=idx,
            split="train" if building_train else "eval",
            scene=scene,
            caption=caption,
            qa=qa_pairs_of(scene),
            statements=[statement_of(scene, True, seed=scene_seed),
                        statement_of(scene, False, seed=scene_seed)],
            image_path=f"img/{idx}.ppm",
        )
        records.append(rec)
        parsed_captions.append(parsed)
        write_ppm(out / rec.image_path, render_scene(scene))

    with open(out / "scenes.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_record_to_json(rec) + "\n")
    Vocab.default().save(out / "vocab.txt")
    return {
        "out": str(out),
        "train": n_train,
        "eval": n_eval,
        "reserved": sorted(list(c) for c in reserved),
    }


def load_corpus(corpus_dir) -> list[SceneRecord]:
    path = Path(corpus_dir) / "scenes.jsonl"
    if not path.exists():
        raise errors.MissingCorpus(f"no scenes.jsonl under {corpus_dir}")
    records = []
    for line in path.read_text(encoding="utf-8").splitlines():
        raw = json.loads(line)
        objects = [SceneObject(**o) for o in raw["objects"]]
        records.append(SceneRecord(
            id=raw["id"],
            split=raw["split"],
            scene=SceneSpec.from_objects(objects),
            caption=raw["caption"],
            qa=[QAPair(p["q"], p["a"], p["kind"]) for p in raw["qa"]],
            statements=[Statement(s["text"], s["truth"])
                        for s in raw["statements"]],
            image_path=raw["image"],
        ))
    return records


def load_image(corpus_dir, record: SceneRecord) -> np.ndarray:
    return read_ppm(Path(corpus_dir) / record.image_path)
