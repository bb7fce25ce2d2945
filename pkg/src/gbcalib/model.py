"""Random-intercept linear mixed model under Huber loss.

Observations come in groups sharing a random intercept. Each group is
whitened by the inverse symmetric root of its compound-symmetry working
covariance ``tau2 * 11' + sigma2 * I``; the Huber loss is then applied to
the whitened residuals.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from gbcalib.errors import DimensionMismatch, TooFewGroups, ValidationError


@dataclass(frozen=True)
class Group:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if x.shape[0] != y.shape[0]:
            raise DimensionMismatch(f"group has {x.shape[0]} covariate rows but {y.shape[0]} responses")
        if y.shape[0] < 1:
            raise DimensionMismatch("group must have at least one observation")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def size(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class GroupedDataset:
    groups: tuple[Group, ...]

    def __post_init__(self):
        groups = tuple(self.groups)
        if not groups:
            raise DimensionMismatch("dataset has no groups")
        p = groups[0].x.shape[1]
        for g in groups:
            if g.x.shape[1] != p:
                raise DimensionMismatch("all groups must share the covariate width")
        object.__setattr__(self, "groups", groups)

    @property
    def n(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def p(self) -> int:
        return self.groups[0].x.shape[1]

    @property
    def n_groups(self) -> int:
        return len(self.groups)


@dataclass(frozen=True)
class WorkingCov:
    tau2: float
    sigma2: float

    def __post_init__(self):
        if not (self.tau2 > 0 and self.sigma2 > 0):
            raise ValidationError("tau2 and sigma2 must be strictly positive")

    def matrix(self, size: int) -> np.ndarray:
        return self.tau2 * np.ones((size, size)) + self.sigma2 * np.eye(size)


@dataclass(frozen=True)
class HuberSpec:
    c: float

    def __post_init__(self):
        if not self.c > 0:
            raise ValidationError("Huber constant c must be positive")


@dataclass(frozen=True)
class WhitenedDataset:
    """Whitened groups stored stacked, with a group label per row."""

    x: np.ndarray
    y: np.ndarray
    group_index: np.ndarray
    n_groups: int
    _sizes: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def groups(self) -> list[tuple[np.ndarray, np.ndarray]]:
        bounds = np.concatenate([[0], np.cumsum(self._sizes)])
        return [(self.x[a:b], self.y[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]

    @classmethod
    def from_groups(cls, groups: Sequence[tuple[np.ndarray, np.ndarray]]) -> "WhitenedDataset":
        xs = [np.atleast_2d(np.asarray(x, dtype=float)) for x, _ in groups]
        ys = [np.asarray(y, dtype=float).reshape(-1) for _, y in groups]
        sizes = np.array([len(y) for y in ys], dtype=int)
        return cls(
            x=np.vstack(xs),
            y=np.concatenate(ys),
            group_index=np.repeat(np.arange(len(ys)), sizes),
            n_groups=len(ys),
            _sizes=sizes,
        )

    def group_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum per-row vectors (n, p) within each group -> (G, p)."""
        out = np.zeros((self.n_groups, values.shape[1]))
        np.add.at(out, self.group_index, values)
        return out


def compound_symmetry_root(size: int, cov: WorkingCov) -> tuple[float, float]:
    """Coefficients ``(a, b)`` of the symmetric root ``L = a I + b 11'``."""
    a = np.sqrt(cov.sigma2)
    b = (np.sqrt(cov.sigma2 + size * cov.tau2) - a) / size
    return float(a), float(b)


def compound_symmetry_root_matrix(size: int, cov: WorkingCov) -> np.ndarray:
    a, b = compound_symmetry_root(size, cov)
    return a * np.eye(size) + b * np.ones((size, size))


def _apply_inverse_root(v: np.ndarray, a: float, b: float) -> np.ndarray:
    # (aI + b11')^{-1} = (1/a)(I - k 11'),  k = b / (a + n b)
    size = v.shape[0]
    k = b / (a + size * b)
    return (v - k * v.sum(axis=0, keepdims=True)) / a


def whiten(data: GroupedDataset, cov: WorkingCov) -> WhitenedDataset:
    """Premultiply each group by the inverse symmetric root of its working covariance."""
    out = []
    for g in data.groups:
        a, b = compound_symmetry_root(g.size, cov)
        out.append((_apply_inverse_root(g.x, a, b), _apply_inverse_root(g.y, a, b)))
    return WhitenedDataset.from_groups(out)


def _check_beta(wd: WhitenedDataset, beta) -> np.ndarray:
    b = np.asarray(beta, dtype=float).reshape(-1)
    if b.shape[0] != wd.p:
        raise DimensionMismatch(f"beta has length {b.shape[0]}, expected {wd.p}")
    return b


def residuals(wd: WhitenedDataset, beta) -> np.ndarray:
    return wd.y - wd.x @ _check_beta(wd, beta)


def huber_rho(u, c: float) -> np.ndarray:
    a = np.abs(u)
    return np.where(a <= c, 0.5 * a * a, c * a - 0.5 * c * c)


def huber_psi(u, c: float) -> np.ndarray:
    return np.clip(u, -c, c)


def loss(wd: WhitenedDataset, beta, h: HuberSpec) -> float:
    """Huber criterion summed over all whitened residuals (not divided by n)."""
    return float(np.sum(huber_rho(residuals(wd, beta), h.c)))


def score(wd: WhitenedDataset, beta, h: HuberSpec) -> np.ndarray:
    """Gradient of ``loss / n``: ``-n^-1 sum_i X_i' psi_c(r_i)``."""
    r = residuals(wd, beta)
    return -(wd.x.T @ huber_psi(r, h.c)) / wd.n


def hessian(wd: WhitenedDataset, beta, h: HuberSpec) -> np.ndarray:
    """``n^-1 sum_i X_i' W_i X_i`` with ``W`` the indicator ``|r| <= c``."""
    r = residuals(wd, beta)
    w = (np.abs(r) <= h.c).astype(float)
    out = (wd.x * w[:, None]).T @ wd.x / wd.n
    return 0.5 * (out + out.T)


def group_scores(wd: WhitenedDataset, beta, h: HuberSpec) -> np.ndarray:
    """Per-group score contributions ``-X_i' psi_c(r_i)``, shape (G, p)."""
    r = residuals(wd, beta)
    return wd.group_sums(-wd.x * huber_psi(r, h.c)[:, None])


def k_hat(wd: WhitenedDataset, beta, h: HuberSpec) -> np.ndarray:
    """Score variability ``n^-1 sum_i U_i U_i'`` with groups as independent units."""
    if wd.n_groups < 2:
        raise TooFewGroups("score variance needs at least two groups")
    u = group_scores(wd, beta, h)
    out = u.T @ u / wd.n
    return 0.5 * (out + out.T)


# --- CSV interchange -------------------------------------------------------


class DatasetFormatError(ValidationError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def read_dataset_csv(path) -> GroupedDataset:
    """Load ``group_id,y,x_1..x_p`` rows; rows sharing an id form one group.

    Group order follows first appearance of each id.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file", 1) from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "group_id" or header[1] != "y":
            raise DatasetFormatError("header must be group_id,y,x_1,...,x_p", 1)
        p = len(header) - 2
        expected = [f"x_{k + 1}" for k in range(p)]
        if header[2:] != expected:
            raise DatasetFormatError(f"covariate columns must be {','.join(expected)}", 1)
        rows: dict[str, list[list[float]]] = {}
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != p + 2:
                raise DatasetFormatError(f"expected {p + 2} fields, got {len(row)}", line_no)
            try:
                values = [float(cell) for cell in row[1:]]
            except ValueError:
                raise DatasetFormatError("non-numeric value", line_no) from None
            if not all(np.isfinite(values)):
                raise DatasetFormatError("non-finite value", line_no)
            rows.setdefault(row[0].strip(), []).append(values)
    if not rows:
        raise DatasetFormatError("no data rows")
    groups = []
    for vals in rows.values():
        arr = np.asarray(vals)
        groups.append(Group(x=arr[:, 1:], y=arr[:, 0]))
    return GroupedDataset(tuple(groups))


def write_dataset_csv(data: GroupedDataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["group_id", "y"] + [f"x_{k + 1}" for k in range(data.p)])
        for i, g in enumerate(data.groups):
            for j in range(g.size):
                w.writerow([i, format(g.y[j], ".17g")] + [format(v, ".17g") for v in g.x[j]])
