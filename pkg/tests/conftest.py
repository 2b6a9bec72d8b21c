"""Shared brute-force oracles. They are written independently of the package
code so that tests compare two implementations, not one with itself."""

import numpy as np
import pytest


def grid_coords(shape, spacing) -> np.ndarray:
    idx = np.indices(shape).reshape(len(shape), -1).T
    return idx * np.asarray(spacing, dtype=np.float64)


def nearest_distance(src: np.ndarray, dst: np.ndarray, chunk: int = 512) -> np.ndarray:
    """For each row of ``src``, Euclidean distance to the closest row of ``dst``."""
    out = np.empty(len(src))
    for start in range(0, len(src), chunk):
        block = src[start:start + chunk]
        d2 = ((block[:, None, :] - dst[None, :, :]) ** 2).sum(-1)
        out[start:start + chunk] = np.sqrt(d2.min(axis=1))
    return out


def brute_signed_distance(labels: np.ndarray, k: int, spacing) -> np.ndarray:
    """Signed distance (negative inside class k) to the nearest opposite-region voxel."""
    coords = grid_coords(labels.shape, spacing)
    inside = (labels == k).ravel()
    out = np.empty(inside.size)
    out[inside] = -nearest_distance(coords[inside], coords[~inside])
    out[~inside] = nearest_distance(coords[~inside], coords[inside])
    return out


def brute_hausdorff(a: np.ndarray, b: np.ndarray, spacing) -> float:
    """Hausdorff distance over face-adjacency boundary voxels by all-pairs search."""
    def boundary(m):
        out = np.zeros_like(m)
        for idx in zip(*np.nonzero(m)):
            for ax in range(m.ndim):
                for step in (-1, 1):
                    nb = list(idx)
                    nb[ax] += step
                    if not 0 <= nb[ax] < m.shape[ax] or not m[tuple(nb)]:
                        out[idx] = True
        return out

    pa = np.argwhere(boundary(a)) * np.asarray(spacing, dtype=np.float64)
    pb = np.argwhere(boundary(b)) * np.asarray(spacing, dtype=np.float64)
    return max(nearest_distance(pa, pb).max(), nearest_distance(pb, pa).max())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary

_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")

    def report(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        if reporter is not None:
            reporter.write_line("")
            reporter.write_line(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
