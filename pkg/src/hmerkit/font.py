"""Built-in 5x7 bitmap glyphs for the synthetic renderer."""
from __future__ import annotations

import numpy as np

_ROWS = {
    "0": [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    "1": ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "2": [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    "3": ["####.", "....#", "....#", ".###.", "....#", "....#", "####."],
    "4": ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    "5": ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    "6": ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."],
    "7": ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    "8": [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    "9": [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."],
    "a": [".....", ".....", ".###.", "....#", ".####", "#...#", ".####"],
    "b": ["#....", "#....", "#.##.", "##..#", "#...#", "#...#", "####."],
    "c": [".....", ".....", ".###.", "#....", "#....", "#...#", ".###."],
    "n": [".....", ".....", "#.##.", "##..#", "#...#", "#...#", "#...#"],
    "x": [".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#"],
    "y": [".....", ".....", "#...#", "#...#", ".####", "....#", ".###."],
    "z": [".....", ".....", "#####", "...#.", "..#..", ".#...", "#####"],
    "\\alpha": [".....", ".....", ".##.#", "#..#.", "#..#.", "#..#.", ".##.#"],
    "\\beta": [".##..", "#..#.", "###..", "#..#.", "#...#", "####.", "#...."],
    "\\pi": [".....", ".....", "#####", ".#.#.", ".#.#.", ".#.#.", ".#..#"],
    "\\theta": [".###.", "#...#", "#...#", "#####", "#...#", "#...#", ".###."],
    "+": [".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."],
    "-": [".....", ".....", ".....", "#####", ".....", ".....", "....."],
    "=": [".....", ".....", "#####", ".....", "#####", ".....", "....."],
    "\\times": [".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "....."],
    "(": ["...#.", "..#..", ".#...", ".#...", ".#...", "..#..", "...#."],
    ")": [".#...", "..#..", "...#.", "...#.", "...#.", "..#..", ".#..."],
}

GLYPH_H, GLYPH_W = 7, 5

GLYPHS: dict[str, np.ndarray] = {
    tok: np.array([[c == "#" for c in row] for row in rows], dtype=np.float32)
    for tok, rows in _ROWS.items()
}


def glyph(token: str, scale: int = 1) -> np.ndarray:
    """Bitmap for ``token`` enlarged by an integer factor (nearest neighbour)."""
    bitmap = GLYPHS[token]
    if scale == 1:
        return bitmap.copy()
    return np.kron(bitmap, np.ones((scale, scale), dtype=np.float32))
