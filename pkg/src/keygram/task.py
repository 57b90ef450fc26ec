"""Synthetic compositional grounding task.

Instructions follow one template, "move the <attr> <obj> to the <place>".
The model predicts the attribute id, the object id, and a grounded target
bin. The target composes word-level knowledge: every object and every
place carries a fixed random code, and the attribute decides which of the
two codes is the answer. All codes are observable in training, but a
fixed fraction of (object, place) pairings is held out for evaluation, so
test accuracy measures recombination of familiar knowledge, never novelty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TaskConfig
from .hashing import mix_seed

_TASK_DOMAIN = 0x5441534B

ATTRIBUTE_WORDS = ["red", "green", "blue", "yellow", "white", "black",
                   "purple", "orange", "brown", "pink"]
OBJECT_WORDS = ["mug", "plate", "bottle", "block", "sponge", "cup", "bowl",
                "jar", "brush", "roller", "hammer", "spoon", "fork", "knife",
                "pan", "pot", "lid", "towel", "card", "pen", "marker",
                "stapler", "charger", "lighter", "battery", "tape",
                "scissors", "wrench", "screwdriver", "ball"]
PLACE_WORDS = ["shelf", "drawer", "basket", "tray", "box", "sink", "table",
               "cabinet", "rack", "bin", "counter", "stove", "oven", "fridge",
               "microwave", "dishwasher", "crate", "bucket", "cart", "hook",
               "mat", "desk", "chair", "stool", "ledge", "corner", "basin",
               "pantry", "locker", "hamper"]

PAD, CLS = "[pad]", "[cls]"


@dataclass(frozen=True)
class Example:
    instruction: str
    attribute_id: int
    object_id: int
    target_id: int


@dataclass
class SyntheticTask:
    attributes: list[str]
    objects: list[str]
    places: list[str]
    object_code: np.ndarray   # object id -> code
    place_code: np.ndarray    # place id -> code
    object_attrs: frozenset[str]  # attributes routing the target to the object code
    holdout_pairs: list[tuple[int, int]]
    train: list[Example]
    test: list[Example]
    vocab: list[str]
    target_labels: int

    @property
    def token_ids(self) -> dict[str, int]:
        return {w: i for i, w in enumerate(self.vocab)}

    def tokenize(self, instruction: str) -> list[int]:
        ids = self.token_ids
        return [ids[CLS]] + [ids[w] for w in instruction.split()]

    @property
    def sequence_length(self) -> int:
        return len(self.tokenize(self.train[0].instruction))


def generate_task(seed: int, cfg: TaskConfig = TaskConfig()) -> SyntheticTask:
    """Deterministic dataset; the same seed always yields the same task."""
    if min(cfg.attributes, cfg.objects, cfg.places) < 2:
        raise ValueError("need at least 2 words per vocabulary")
    if not 0 < cfg.holdout_fraction < 0.5:
        raise ValueError(f"holdout fraction {cfg.holdout_fraction} outside (0, 0.5)")
    if cfg.attributes > len(ATTRIBUTE_WORDS) or cfg.objects > len(OBJECT_WORDS) \
            or cfg.places > len(PLACE_WORDS):
        raise ValueError("vocabulary request exceeds the built-in word lists")

    rng = np.random.default_rng(mix_seed(seed, _TASK_DOMAIN))
    attributes = ATTRIBUTE_WORDS[:cfg.attributes]
    objects = OBJECT_WORDS[:cfg.objects]
    places = PLACE_WORDS[:cfg.places]
    codes = cfg.target_labels

    # Codes cover the label space as evenly as the word counts allow.
    def draw_codes(n: int) -> np.ndarray:
        repeats = -(-n // codes)
        return rng.permutation(np.tile(np.arange(codes), repeats)[:n])

    object_code = draw_codes(cfg.objects)
    place_code = draw_codes(cfg.places)
    shuffled = list(rng.permutation(cfg.attributes))
    object_attrs = frozenset(attributes[i] for i in shuffled[:cfg.attributes // 2])

    # Hold out pairings, never words: every object and place keeps at
    # least one training pairing, so all codes stay observable.
    pairs = [(o, p) for o in range(cfg.objects) for p in range(cfg.places)]
    order = rng.permutation(len(pairs))
    want = int(round(cfg.holdout_fraction * len(pairs)))
    object_left = {o: cfg.places for o in range(cfg.objects)}
    place_left = {p: cfg.objects for p in range(cfg.places)}
    holdout = []
    for idx in order:
        if len(holdout) == want:
            break
        o, p = pairs[idx]
        if object_left[o] > 1 and place_left[p] > 1:
            holdout.append((o, p))
            object_left[o] -= 1
            place_left[p] -= 1
    holdout_set = set(holdout)

    def make_example(a: int, o: int, p: int) -> Example:
        attr, obj, place = attributes[a], objects[o], places[p]
        target = int(object_code[o]) if attr in object_attrs \
            else int(place_code[p])
        return Example(
            instruction=f"move the {attr} {obj} to the {place}",
            attribute_id=a, object_id=o, target_id=target,
        )

    train, test = [], []
    for o, p in pairs:
        bucket = test if (o, p) in holdout_set else train
        for a in range(cfg.attributes):
            bucket.append(make_example(a, o, p))

    vocab = [PAD, CLS, "move", "the", "to"] + sorted(set(attributes + objects + places))
    return SyntheticTask(
        attributes=attributes, objects=objects, places=places,
        object_code=object_code, place_code=place_code, object_attrs=object_attrs,
        holdout_pairs=sorted(holdout_set), train=train, test=test, vocab=vocab,
        target_labels=cfg.target_labels,
    )
