import numpy as np
import pytest

from entitytk.annotations import EntityDataset, image_record_from_masks
from entitytk.resolver import ResolvedPrediction, ScoredEntity


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def random_mask(rng, h: int, w: int, p: float = 0.4) -> np.ndarray:
    return rng.random((h, w)) < p


def random_rect_mask(rng, h: int, w: int) -> np.ndarray:
    rh = int(rng.integers(1, max(2, h // 2 + 1)))
    rw = int(rng.integers(1, max(2, w // 2 + 1)))
    y = int(rng.integers(0, h - rh + 1))
    x = int(rng.integers(0, w - rw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[y : y + rh, x : x + rw] = True
    return mask


def random_id_map(rng, h: int, w: int, max_entities: int) -> np.ndarray:
    """Non-overlapping ID map: painted rectangles, later paint wins."""
    ids = np.zeros((h, w), dtype=np.int64)
    n = int(rng.integers(0, max_entities + 1))
    for k in range(1, n + 1):
        rect = random_rect_mask(rng, h, w)
        ids[rect] = k
    return ids


def random_score(rng) -> float:
    score = float(rng.uniform(0.05, 1.0))
    if rng.random() < 0.5:
        score = round(score, 1)  # provoke ties
    return max(score, 0.05)


def gt_dataset_from_maps(maps, tag: str = "synthetic") -> EntityDataset:
    """Wrap GT ID maps into an EntityDataset (image ids 1..n)."""
    records = []
    for i, ids in enumerate(maps, start=1):
        masks = [ids == k for k in np.unique(ids) if k != 0]
        records.append(
            image_record_from_masks(i, ids.shape[0], ids.shape[1], masks, tag)
        )
    return EntityDataset(images=tuple(records))


def random_scored_entities(rng, h: int, w: int, max_entities: int, with_probs: bool = False):
    """Random possibly-overlapping scored masks with unique ids 1..n."""
    n = int(rng.integers(0, max_entities + 1))
    out = []
    for k in range(1, n + 1):
        mask = random_rect_mask(rng, h, w)
        probs = None
        if with_probs and rng.random() < 0.5:
            probs = rng.random((h, w))
        out.append(
            ScoredEntity(
                entity_id=k, mask=mask, score=random_score(rng), pixel_probs=probs
            )
        )
    return out


def resolved_from_map(rng, ids: np.ndarray) -> ResolvedPrediction:
    scores = {0: 0.0}
    for k in np.unique(ids):
        if k != 0:
            scores[int(k)] = random_score(rng)
    return ResolvedPrediction(ids=ids, scores=scores)


@pytest.fixture
def rng():
    return rng_for(1234)
