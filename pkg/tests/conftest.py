"""Shared fixtures and independent oracles used across the suite."""
from __future__ import annotations

import itertools

import numpy as np
import pytest

from nn2lut.dataset import Dataset, make_blobs, split, standardize
from nn2lut.qnn import ActivationSpec, QuantLayer, QuantNetwork


def manual_network(weights, bias, in_spec, out_spec, num_classes=2) -> QuantNetwork:
    """Single-layer network with hand-picked weights (no batch-norm)."""
    w = np.asarray(weights, dtype=np.float64)
    layer = QuantLayer(weights=w, bias=np.asarray(bias, dtype=np.float64),
                       mask=np.ones_like(w), activation=out_spec, bn=None)
    return QuantNetwork(input_quant=in_spec, layers=[layer], num_classes=num_classes)


def and_network() -> QuantNetwork:
    """Bipolar AND neuron: weights [1, 1], bias -0.5."""
    return manual_network([[1.0, 1.0]], [-0.5],
                          ActivationSpec("bipolar"), ActivationSpec("bipolar"))


@pytest.fixture
def blobs_2class():
    raw = make_blobs(samples=600, features=6, classes=2, spread=0.6, seed=11)
    tr_raw, te_raw = split(raw, 0.75, seed=12)
    (tr, te), stats = standardize(tr_raw, [te_raw])
    return tr, te, stats


# --- independent brute-force oracles -------------------------------------------

def all_valid_cubes(width: int, on: set[int]) -> list[tuple[int, int]]:
    """Every (pos, neg) cube whose minterms all lie inside the ON-set."""
    out = []
    for codes in itertools.product((0, 1, 2), repeat=width):
        pos = neg = 0
        for v, code in enumerate(codes):
            if code == 1:
                pos |= 1 << v
            elif code == 0:
                neg |= 1 << v
        ok = True
        for m in range(1 << width):
            if (m & pos) == pos and (m & neg) == 0 and m not in on:
                ok = False
                break
        if ok:
            out.append((pos, neg))
    return out


def cube_minterms(width: int, pos: int, neg: int) -> set[int]:
    return {m for m in range(1 << width)
            if (m & pos) == pos and (m & neg) == 0}


def brute_force_min_cover_size(width: int, on: set[int]) -> int:
    """Smallest number of ON-only cubes whose union is exactly the ON-set."""
    if not on:
        return 0
    cubes = all_valid_cubes(width, on)
    coverage = [cube_minterms(width, p, n) for p, n in cubes]
    for k in range(1, len(cubes) + 1):
        for combo in itertools.combinations(range(len(cubes)), k):
            union = set()
            for i in combo:
                union |= coverage[i]
            if union == on:
                return k
    raise AssertionError("unreachable: minterm cover always exists")
