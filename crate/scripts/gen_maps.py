#!/usr/bin/env python3
"""Generate the bundled desk-scale (15x15) and paper-scale (41x41) maps.

Every map puts iron and a factory in the upper part and grass and a toolshed
in the lower part, with wood near the middle row, so the cheaper bridge
depends on where the agent starts. Output is deterministic.

The desk-scale gold-or-gem maps are corridors with every item in a side
alcove. Open 15x15 maps give that task about 30k (cell, inventory) states,
too many for tabular agents to settle within the desk training budget.

    python3 scripts/gen_maps.py crates/core/data/maps
"""

import random
import sys
from collections import deque
from pathlib import Path

TASKS = ["bridge", "gold", "gold-or-gem"]


def connected(grid):
    n = len(grid)
    free = [(x, y) for y in range(n) for x in range(n) if grid[y][x] != "#"]
    seen = {free[0]}
    queue = deque([free[0]])
    while queue:
        x, y = queue.popleft()
        for dx, dy in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            nx, ny = x + dx, y + dy
            if 0 <= nx < n and 0 <= ny < n and grid[ny][nx] != "#" and (nx, ny) not in seen:
                seen.add((nx, ny))
                queue.append((nx, ny))
    return len(seen) == len(free)


def isolated(grid, x, y):
    """True if no other non-empty cell touches (x, y), diagonals included."""
    n = len(grid)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            nx, ny = x + dx, y + dy
            if 0 <= nx < n and 0 <= ny < n and grid[ny][nx] != ".":
                return False
    return True


def place(grid, rng, glyph, rows, cols):
    for _ in range(1000):
        x = rng.randrange(*cols)
        y = rng.randrange(*rows)
        if isolated(grid, x, y):
            grid[y][x] = glyph
            return True
    return False


def make(task, n, seed):
    rng = random.Random(f"{task}-{n}-{seed}")
    while True:
        grid = [["."] * n for _ in range(n)]
        top = (1, n // 4 + 1)
        bottom = (n - n // 4 - 1, n - 1)
        middle = (n // 2 - n // 8, n // 2 + n // 8 + 1)
        full = (1, n - 1)
        walls = n // 5
        for _ in range(walls):
            length = rng.randrange(2, max(3, n // 4))
            x, y = rng.randrange(2, n - 2), rng.randrange(2, n - 2)
            horizontal = rng.random() < 0.5
            for i in range(length):
                cx, cy = (x + i, y) if horizontal else (x, y + i)
                if 0 < cx < n - 1 and 0 < cy < n - 1:
                    grid[cy][cx] = "#"
        wanted = [("I", top, full), ("F", top, full), ("G", bottom, full), ("S", bottom, full), ("T", middle, full)]
        wanted *= 1 if n < 30 else 2
        if task in ("gold", "gold-or-gem"):
            wanted.append(("o", middle, (n - n // 4, n - 1)))
        if task == "gold-or-gem":
            wanted.append(("W", middle, (1, n // 4 + 1)))
            wanted.append(("m", middle, (1, n // 4 + 1)))
        if not all(place(grid, rng, g, rows, cols) for g, rows, cols in wanted):
            continue
        if not connected(grid):
            continue
        empty_top = [(x, y) for y in range(0, n // 2) for x in range(n) if grid[y][x] == "."]
        empty_bottom = [(x, y) for y in range(n // 2 + 1, n) for x in range(n) if grid[y][x] == "."]
        starts = rng.sample(empty_top, 2) + rng.sample(empty_bottom, 2)
        centre = [(x, n // 2) for x in range(n) if grid[n // 2][x] == "."]
        starts.insert(2, rng.choice(centre))
        return grid, starts


def make_corridors(n, seed):
    rng = random.Random(f"gold-or-gem-corridor-{n}-{seed}")
    rows = (1, n // 2, n - 2)
    while True:
        grid = [["#"] * n for _ in range(n)]
        cols = [1, n // 2, n - 2]
        for y in rows:
            for x in range(1, n - 1):
                grid[y][x] = "."
        for x in cols:
            for y in range(1, n - 1):
                grid[y][x] = "."

        def alcoves(row, side):
            y = row + side
            return [(x, y) for x in range(3, n - 3) if all(abs(x - c) > 1 for c in cols)]

        top, bottom = alcoves(rows[0], 1), alcoves(rows[2], -1)
        middle = alcoves(rows[1], -1) + alcoves(rows[1], 1)
        spots = {}
        ok = True
        for glyph, pool in (("I", top), ("F", top), ("G", bottom), ("S", bottom),
                            ("T", middle), ("o", middle), ("W", middle), ("m", middle)):
            free = [p for p in pool if all(abs(p[0] - q[0]) > 1 or p[1] != q[1] for q in spots.values())]
            if not free:
                ok = False
                break
            spots[glyph] = rng.choice(free)
        if not ok:
            continue
        for glyph, (x, y) in spots.items():
            grid[y][x] = glyph
        corridor = [(x, y) for y in range(n) for x in range(n) if grid[y][x] == "."]
        starts = [rng.choice([c for c in corridor if c[1] == rows[0]]) for _ in range(2)]
        starts.append(rng.choice([c for c in corridor if c[1] == rows[1]]))
        starts += [rng.choice([c for c in corridor if c[1] == rows[2]]) for _ in range(2)]
        if len(set(starts)) == 5:
            return grid, starts


def render(task, n, seed, grid, starts):
    lines = [f"# {task} {n}x{n} #{seed}: iron/factory above, grass/toolshed below"]
    lines.append("starts: " + " ".join(f"({x},{y})" for x, y in starts))
    lines.extend("".join(row) for row in grid)
    return "\n".join(lines) + "\n"


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/maps")
    out.mkdir(parents=True, exist_ok=True)
    for task in TASKS:
        for n, count in ((15, 3), (41, 10)):
            for seed in range(count):
                if task == "gold-or-gem" and n == 15:
                    grid, starts = make_corridors(n, seed)
                else:
                    grid, starts = make(task, n, seed)
                (out / f"{task}-{n}-{seed}.map").write_text(render(task, n, seed, grid, starts))


if __name__ == "__main__":
    main()
