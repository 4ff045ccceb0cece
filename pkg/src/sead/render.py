"""Spacetime diagrams as binary portable pixmaps (P5 grayscale, P6 colour)."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .lattice import ContractError, DEFAULT_TRACE_BUDGET, SpacetimeTrace
from .tasks import UNKNOWN, TaskSpec

GREEN = (40, 170, 60)
RED = (210, 40, 40)
BLUE = (30, 60, 230)


def pnm_bytes(image: np.ndarray) -> bytes:
    """P5 for a 2-D uint8 array, P6 for ``(rows, cols, 3)``."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    if image.ndim == 2:
        kind = b"P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        kind = b"P6"
    else:
        raise ContractError("image must be (rows, cols) or (rows, cols, 3)")
    rows, cols = image.shape[:2]
    return kind + f"\n{cols} {rows}\n255\n".encode() + image.tobytes()


def write_pnm(path, image: np.ndarray) -> None:
    Path(path).write_bytes(pnm_bytes(image))


def read_pnm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    kind, (cols, rows), maxval, body = parts[0], map(int, parts[1].split()), int(parts[2]), parts[3]
    if maxval != 255:
        raise ContractError("only 8-bit pixmaps are supported")
    if kind == b"P5":
        return np.frombuffer(body, dtype=np.uint8).reshape(rows, cols)
    if kind == b"P6":
        return np.frombuffer(body, dtype=np.uint8).reshape(rows, cols, 3)
    raise ContractError(f"unsupported pixmap kind {kind!r}")


def _rows(trace: SpacetimeTrace | np.ndarray, budget: int) -> np.ndarray:
    rows = trace.as_array() if isinstance(trace, SpacetimeTrace) else np.asarray(trace)
    if rows.size > budget:
        raise ContractError(
            f"trace has {rows.size} cells, over the {budget} budget; re-run with a larger trace stride"
        )
    return rows


def symbol_image(trace, alphabet_size: int, budget: int = DEFAULT_TRACE_BUDGET) -> np.ndarray:
    """Grayscale, symbol 0 white and the highest id black; time runs downward."""
    rows = _rows(trace, budget).astype(np.int64)
    return (255 - (rows * 255) // (alphabet_size - 1)).astype(np.uint8)


def cell_correct(task: TaskSpec, rows: np.ndarray, answer: np.ndarray) -> np.ndarray:
    """Per-cell agreement of every row with the final answer; unresolved cells count as wrong.

    ``answer`` is the oracle's final output for fixed-point tasks, or the oracle
    rollout (same shape as ``rows``) for rule 110.
    """
    rows = np.asarray(rows)
    if task.name == "parity":
        v = rows % 3
        return (v != UNKNOWN) & (v == answer[None, :])
    if task.name == "addition":
        ab, c = np.divmod(rows, 3)
        a, b = np.divmod(ab, 2)
        return (c != UNKNOWN) & ((a ^ b ^ c) == answer[None, :])
    return rows == np.asarray(answer).reshape(rows.shape)


def overlay_image(correct: np.ndarray, lightcone_source: int | None = None, speed: int = 1) -> np.ndarray:
    img = np.empty((*correct.shape, 3), dtype=np.uint8)
    img[correct] = GREEN
    img[~correct] = RED
    if lightcone_source is not None:
        draw_lightcone(img, lightcone_source, speed)
    return img


def draw_lightcone(img: np.ndarray, source: int, speed: int = 1) -> None:
    """Marks cells ``(t, source + speed*t)``: the dashed guide of a unit-speed front."""
    rows, cols = img.shape[:2]
    for t in range(rows):
        x = source + speed * t
        if not 0 <= x < cols:
            break
        if (t // 2) % 2 == 0:
            img[t, x] = BLUE
