"""Order → family → genus → species tree, probability rollup and the deepest-confident-rank rule."""

from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .config_loader import CONFIG_DIR
from .errors import ConfigError, DataError, ShapeError, TaxonomyParseError

RANKS = ("order", "family", "genus", "species")
DEFAULT_TAXONOMY = CONFIG_DIR / "taxonomy.tsv"
DEFAULT_THRESHOLD = 0.8
MASS_TOLERANCE = 1e-6


def taxon_id(rank: str, name: str) -> str:
    return f"{rank}:{name}"


@dataclass(frozen=True)
class Taxon:
    id: str
    name: str
    rank: str
    parent: str | None


class TaxonomyTree:
    """Immutable after construction. Species order is the classifier output order."""

    def __init__(self, lineages: Sequence[tuple[str, str, str, str]]):
        if not lineages:
            raise DataError("taxonomy has no species")
        self._nodes: dict[str, Taxon] = {}
        self._taxa: dict[str, list[str]] = {rank: [] for rank in RANKS}
        self._lineages = [tuple(row) for row in lineages]
        for row in self._lineages:
            parent = None
            for rank, name in zip(RANKS, row):
                tid = taxon_id(rank, name)
                if tid not in self._nodes:
                    self._nodes[tid] = Taxon(tid, name, rank, parent)
                    self._taxa[rank].append(name)
                parent = tid
        self._position = {
            rank: {name: i for i, name in enumerate(names)} for rank, names in self._taxa.items()
        }
        self._rank_index = {
            rank: np.array([self._position[rank][row[r]] for row in self._lineages], dtype=np.intp)
            for r, rank in enumerate(RANKS)
        }

    @property
    def species(self) -> list[str]:
        return list(self._taxa["species"])

    def __len__(self) -> int:
        return len(self._lineages)

    def taxa(self, rank: str) -> list[str]:
        return list(self._taxa[rank])

    def node(self, tid: str) -> Taxon:
        return self._nodes[tid]

    def nodes(self) -> list[Taxon]:
        return list(self._nodes.values())

    def index_of(self, species: str) -> int:
        try:
            return self._position["species"][species]
        except KeyError:
            raise DataError(f"unknown species {species!r}") from None

    def has_species(self, species: str) -> bool:
        return species in self._position["species"]

    def lineage(self, species: str) -> dict[str, str]:
        return dict(zip(RANKS, self._lineages[self.index_of(species)]))

    def rank_index(self, rank: str) -> np.ndarray:
        """For each species index, the index of its ancestor within taxa(rank)."""
        return self._rank_index[rank]

    def counts(self) -> dict[str, int]:
        return {rank: len(names) for rank, names in self._taxa.items()}

    def subset(self, species: Sequence[str]) -> "TaxonomyTree":
        return TaxonomyTree([self._lineages[self.index_of(s)] for s in species])

    def to_text(self) -> str:
        lines = []
        for order, family, genus, species in self._lineages:
            lines.append("\t".join((order, family, genus, species)))
        return "\n".join(lines) + "\n"


def parse_taxonomy(text: str) -> TaxonomyTree:
    """Parse `order<TAB>family<TAB>genus<TAB>species` lines; '#' starts a comment line."""
    lineages: list[tuple[str, str, str, str]] = []
    parent_of: dict[tuple[str, str], tuple[str, str] | None] = {}
    rank_of: dict[str, str] = {}
    seen_species: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = [f.strip() for f in line.split("\t")]
        if len(fields) != 4:
            raise TaxonomyParseError(lineno, f"expected 4 tab-separated columns, got {len(fields)}")
        for rank, value in zip(RANKS, fields):
            if not value:
                raise TaxonomyParseError(lineno, f"orphan node: empty {rank} column")
        order, family, genus, species = fields
        if " " not in species:
            species = f"{genus} {species}"
        if species in seen_species:
            raise TaxonomyParseError(
                lineno, f"duplicate species {species!r} (first on line {seen_species[species]})"
            )
        seen_species[species] = lineno
        row = (order, family, genus, species)
        parent = None
        for rank, name in zip(RANKS, row):
            if rank_of.setdefault(name, rank) != rank:
                raise TaxonomyParseError(
                    lineno, f"rank violation: {name!r} used as {rank} and as {rank_of[name]}"
                )
            key = (rank, name)
            if key in parent_of and parent_of[key] != parent:
                raise TaxonomyParseError(
                    lineno, f"{rank} {name!r} already placed under {parent_of[key][1]!r}"
                )
            parent_of[key] = parent
            parent = key
        lineages.append(row)
    if not lineages:
        raise TaxonomyParseError(0, "no species lines")
    return TaxonomyTree(lineages)


def load_taxonomy(path: str | Path | None = None) -> TaxonomyTree:
    path = Path(path) if path else DEFAULT_TAXONOMY
    if not path.exists():
        raise ConfigError(f"taxonomy file not found: {path}")
    return parse_taxonomy(path.read_text(encoding="utf-8"))


@dataclass(eq=False)
class ProbVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise ShapeError(f"probability vector must be 1-D and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DataError("probabilities must be finite and non-negative")
        if abs(float(v.sum()) - 1.0) > MASS_TOLERANCE:
            raise DataError(f"probabilities sum to {float(v.sum())!r}, expected 1")
        self.values = v

    def __len__(self) -> int:
        return int(self.values.size)

    def argmax(self) -> int:
        return int(np.argmax(self.values))


RankDistributions = dict[str, dict[str, float]]


def rollup(probs: ProbVector | Sequence[float], tree: TaxonomyTree) -> RankDistributions:
    """Sum species probabilities up the tree; one distribution per rank."""
    if not isinstance(probs, ProbVector):
        probs = ProbVector(np.asarray(probs, dtype=np.float64))
    if len(probs) != len(tree):
        raise ShapeError(f"{len(probs)} probabilities for {len(tree)} species")
    rolled: RankDistributions = {}
    for rank in RANKS:
        names = tree.taxa(rank)
        mass = np.bincount(tree.rank_index(rank), weights=probs.values, minlength=len(names))
        rolled[rank] = {name: float(p) for name, p in zip(names, mass)}
    return rolled


@dataclass(frozen=True)
class Decision:
    taxon_id: str
    name: str
    rank: str
    confidence: float
    below_threshold: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _best(dist: Mapping[str, float]) -> tuple[str, float]:
    name, p = min(dist.items(), key=lambda kv: (-kv[1], kv[0]))
    return name, p


def decide(rolled: RankDistributions, threshold: float = DEFAULT_THRESHOLD) -> Decision:
    """Deepest rank whose best taxon reaches the threshold; best order, flagged, otherwise."""
    if not 0 < threshold <= 1:
        raise ConfigError(f"decision threshold must lie in (0, 1], got {threshold}")
    for rank in reversed(RANKS):
        name, p = _best(rolled[rank])
        if p >= threshold:
            return Decision(taxon_id(rank, name), name, rank, p)
    name, p = _best(rolled["order"])
    return Decision(taxon_id("order", name), name, "order", p, below_threshold=True)
