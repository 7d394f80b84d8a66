"""Two-sided market instances: generation, rank derivation, and JSON (de)serialization.

Utilities are stored as two square matrices. ``utility_1[i, j]`` is what agent
``i`` on side 1 gets from a match with agent ``j`` on side 2, and
``utility_2[j, i]`` is the reverse.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Union

import numpy as np

FORMAT_TAG = "smlab-instance/1"
UNACCEPTABLE = -1
MAX_REDRAWS = 10**6

SM_RANGE = (1.0, 10.0)
SMI_RANGE = (-10.0, 10.0)


class Variant(str, enum.Enum):
    SM = "SM"
    SMI = "SMI"
    SMT = "SMT"


class PrefType(str, enum.Enum):
    SYMMETRIC = "Symmetric"
    ASYMMETRIC = "Asymmetric"


class InstanceValidationError(ValueError):
    """Raised when an instance document breaks one of the instance invariants."""


@dataclass(frozen=True, eq=False)
class Instance:
    n_side: int
    variant: Variant
    pref_type: PrefType
    utility_1: np.ndarray
    utility_2: np.ndarray
    seed: int

    def __post_init__(self):
        for name in ("utility_1", "utility_2"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "pref_type", PrefType(self.pref_type))

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            self.n_side == other.n_side
            and self.variant == other.variant
            and self.pref_type == other.pref_type
            and self.seed == other.seed
            and np.array_equal(self.utility_1, other.utility_1)
            and np.array_equal(self.utility_2, other.utility_2)
        )

    def __hash__(self):
        return hash((self.n_side, self.variant, self.pref_type, self.seed,
                     self.utility_1.tobytes(), self.utility_2.tobytes()))

    @property
    def acceptable_1(self) -> np.ndarray:
        """Boolean matrix: side-1 agent i finds side-2 agent j acceptable."""
        if self.variant is Variant.SMI:
            return self.utility_1 >= 0
        return np.ones_like(self.utility_1, dtype=bool)

    @property
    def acceptable_2(self) -> np.ndarray:
        if self.variant is Variant.SMI:
            return self.utility_2 >= 0
        return np.ones_like(self.utility_2, dtype=bool)

    @property
    def mutually_acceptable(self) -> np.ndarray:
        """Boolean matrix indexed [i, j] (side 1 by side 2)."""
        return self.acceptable_1 & self.acceptable_2.T


@dataclass(frozen=True, eq=False)
class RankProfile:
    """Competition ranks (1 = best); ``UNACCEPTABLE`` marks excluded partners."""

    rank_1: np.ndarray
    rank_2: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, RankProfile):
            return NotImplemented
        return np.array_equal(self.rank_1, other.rank_1) and np.array_equal(self.rank_2, other.rank_2)


def _rows_strict(utility: np.ndarray, acceptable: np.ndarray) -> np.ndarray:
    """Per-row flag: all acceptable entries pairwise distinct."""
    ok = np.ones(utility.shape[0], dtype=bool)
    for r in range(utility.shape[0]):
        vals = utility[r][acceptable[r]]
        ok[r] = np.unique(vals).size == vals.size
    return ok


def _acceptable(variant: Variant, utility: np.ndarray) -> np.ndarray:
    if variant is Variant.SMI:
        return utility >= 0
    return np.ones_like(utility, dtype=bool)


def _draw_strict(rng: np.random.Generator, variant: Variant, n: int, low: float, high: float) -> np.ndarray:
    """Draw an n x n matrix, redrawing rows until they are strict."""
    mat = rng.uniform(low, high, size=(n, n))
    redraws = 0
    while True:
        bad = np.flatnonzero(~_rows_strict(mat, _acceptable(variant, mat)))
        if bad.size == 0:
            return mat
        redraws += bad.size
        if redraws > MAX_REDRAWS:
            raise RuntimeError("instance generation exceeded the redraw cap")
        mat[bad] = rng.uniform(low, high, size=(bad.size, n))


def _force_ties(rng: np.random.Generator, mat: np.ndarray, axis: int) -> None:
    """With probability 1/2 per row (axis=1) or column (axis=0), copy one entry over another."""
    n = mat.shape[0]
    if n < 2:
        return
    for k in range(n):
        if rng.random() < 0.5:
            a, b = rng.choice(n, size=2, replace=False)
            if axis == 1:
                mat[k, b] = mat[k, a]
            else:
                mat[b, k] = mat[a, k]


def random_latin_square(n: int, rng: np.random.Generator) -> np.ndarray:
    """Cyclic square with rows, columns and symbols shuffled; entries 0..n-1."""
    base = (np.arange(n)[:, None] + np.arange(n)[None, :]) % n
    base = base[rng.permutation(n)][:, rng.permutation(n)]
    return rng.permutation(n)[base]


def _draw_symmetric(rng: np.random.Generator, n: int, low: float, high: float) -> np.ndarray:
    """Mirrored utilities whose row and column orders agree (p_i(j) == p_j(i)).

    A random Latin square fixes every pair's shared rank. The n*n uniform
    draws are sorted and handed out band by band: the n largest go to the
    rank-1 cells, the next n to rank-2 cells, and so on, so every row and
    every column is ordered exactly as the square says.
    """
    latin = random_latin_square(n, rng)
    for _ in range(MAX_REDRAWS):
        vals = rng.uniform(low, high, size=n * n)
        if np.unique(vals).size == vals.size:
            break
    else:
        raise RuntimeError("instance generation exceeded the redraw cap")
    vals = np.sort(vals)[::-1]
    u = np.empty((n, n))
    for r in range(n):
        cells = np.argwhere(latin == r)
        u[cells[:, 0], cells[:, 1]] = rng.permutation(vals[r * n:(r + 1) * n])
    return u


def generate_instance(variant, pref_type, n_side: int, seed: int) -> Instance:
    """Generate a random instance; deterministic in its arguments.

    SM/SMT utilities are continuous uniform on [1, 10], SMI on [-10, 10] with
    negative entries meaning "unacceptable". SMT rows get explicit ties.
    Symmetric instances mirror both utilities and ranks.
    """
    variant = Variant(variant)
    pref_type = PrefType(pref_type)
    if n_side < 1:
        raise ValueError(f"n_side must be >= 1, got {n_side}")
    rng = np.random.default_rng(seed)
    low, high = SMI_RANGE if variant is Variant.SMI else SM_RANGE

    if pref_type is PrefType.SYMMETRIC:
        u1 = _draw_symmetric(rng, n_side, low, high)
        if variant is Variant.SMT:
            _force_ties(rng, u1, axis=1)
            _force_ties(rng, u1, axis=0)
        u2 = u1.T.copy()
    else:
        u1 = _draw_strict(rng, variant, n_side, low, high)
        u2 = _draw_strict(rng, variant, n_side, low, high)
        if variant is Variant.SMT:
            _force_ties(rng, u1, axis=1)
            _force_ties(rng, u2, axis=1)

    inst = Instance(n_side, variant, pref_type, u1, u2, int(seed))
    validate_instance(inst)
    return inst


def competition_ranks(utility: np.ndarray, acceptable: np.ndarray | None = None) -> np.ndarray:
    """Rank each row by descending utility; ties share the smallest position.

    Entries outside ``acceptable`` get ``UNACCEPTABLE`` and do not take up a
    position.
    """
    utility = np.asarray(utility, dtype=np.float64)
    if acceptable is None:
        acceptable = np.ones_like(utility, dtype=bool)
    ranks = np.full(utility.shape, UNACCEPTABLE, dtype=np.int64)
    for r in range(utility.shape[0]):
        row = utility[r]
        acc = acceptable[r]
        vals = row[acc]
        # 1 + number of acceptable entries strictly better
        ranks[r, acc] = 1 + (vals[None, :] > vals[:, None]).sum(axis=1)
    return ranks


def derive_ranks(instance: Instance) -> RankProfile:
    return RankProfile(
        competition_ranks(instance.utility_1, instance.acceptable_1),
        competition_ranks(instance.utility_2, instance.acceptable_2),
    )


def full_ranks(instance: Instance) -> RankProfile:
    """Ranks over complete lists, ignoring acceptability.

    Acceptable partners keep their ``derive_ranks`` rank, unacceptable ones
    are ranked after them. Cost measures use this so that a matching with an
    unacceptable pair still has a finite cost.
    """
    return RankProfile(competition_ranks(instance.utility_1), competition_ranks(instance.utility_2))


# -- validation / serialization ---------------------------------------------


def validate_instance(inst: Instance) -> None:
    n = inst.n_side
    if n < 1:
        raise InstanceValidationError("n_side must be positive")
    for name in ("utility_1", "utility_2"):
        mat = getattr(inst, name)
        if mat.shape != (n, n):
            raise InstanceValidationError(f"{name} shape {mat.shape} does not match n_side={n}")
        if not np.isfinite(mat).all():
            raise InstanceValidationError(f"{name} contains non-finite values")
        low, high = SMI_RANGE if inst.variant is Variant.SMI else SM_RANGE
        if mat.min() < low or mat.max() > high:
            raise InstanceValidationError(f"{name} out of range [{low:g}, {high:g}]")
        if inst.variant in (Variant.SM, Variant.SMI):
            if not _rows_strict(mat, _acceptable(inst.variant, mat)).all():
                raise InstanceValidationError(f"{name}: strict order violated")
    if inst.pref_type is PrefType.SYMMETRIC and not np.array_equal(inst.utility_1, inst.utility_2.T):
        raise InstanceValidationError("symmetric instance: utility_1 is not the transpose of utility_2")


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def instance_to_dict(inst: Instance) -> dict:
    return {
        "format": FORMAT_TAG,
        "n_side": inst.n_side,
        "variant": inst.variant.value,
        "pref_type": inst.pref_type.value,
        "utility_1": [[_fmt(x) for x in row] for row in inst.utility_1],
        "utility_2": [[_fmt(x) for x in row] for row in inst.utility_2],
        "seed": inst.seed,
    }


def instance_from_dict(doc: dict) -> Instance:
    if doc.get("format") != FORMAT_TAG:
        raise InstanceValidationError(f"unknown format tag {doc.get('format')!r}, expected {FORMAT_TAG!r}")
    try:
        inst = Instance(
            n_side=int(doc["n_side"]),
            variant=Variant(doc["variant"]),
            pref_type=PrefType(doc["pref_type"]),
            utility_1=np.array([[float(x) for x in row] for row in doc["utility_1"]], dtype=np.float64),
            utility_2=np.array([[float(x) for x in row] for row in doc["utility_2"]], dtype=np.float64),
            seed=int(doc["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceValidationError(f"malformed instance document: {exc}") from exc
    validate_instance(inst)
    return inst


PathOrFile = Union[str, Path, IO[str]]


def save_instance(inst: Instance, sink: PathOrFile) -> None:
    doc = instance_to_dict(inst)
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(json.dumps(doc, indent=1))
    else:
        json.dump(doc, sink, indent=1)


def load_instance(source: PathOrFile) -> Instance:
    if isinstance(source, (str, Path)):
        doc = json.loads(Path(source).read_text())
    else:
        doc = json.load(source)
    return instance_from_dict(doc)
