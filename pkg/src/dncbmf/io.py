"""Tab-delimited persistence for matrices, masks, manifests and chains.

Matrices carry one header row (column labels) and one leading label column.
Floats are written with ``repr`` so every value reads back bit-identical.
"""

import hashlib
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gibbs import PosteriorChain, SamplerConfig
from .model import BetaMatrix, FactorState, Hyperparams
from .specfun import DomainError

__all__ = [
    "ParseError",
    "ReadCounts",
    "betas_from_reads",
    "file_sha256",
    "ingest_matrix",
    "read_chain",
    "read_manifest",
    "read_mask",
    "read_matrix",
    "staged_output",
    "top_variance",
    "write_chain",
    "write_manifest",
    "write_mask",
    "write_matrix",
]


class ParseError(ValueError):
    """A file could not be parsed; the message names the offending location."""


def _fmt(x) -> str:
    return repr(float(x))


def write_matrix(path, values, row_ids, col_ids, corner: str = "id") -> None:
    values = np.asarray(values)
    with open(path, "w") as fh:
        fh.write("\t".join([corner] + [str(c) for c in col_ids]) + "\n")
        for label, row in zip(row_ids, values):
            fh.write("\t".join([str(label)] + [_fmt(v) for v in row]) + "\n")


def read_matrix(path, dtype=float):
    """Parse a labeled matrix; returns (values, row_ids, col_ids)."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: no such file")
    with open(path) as fh:
        lines = [ln.rstrip("\r\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split("\t")
    col_ids = header[1:]
    if not col_ids:
        raise ParseError(f"{path}: header has no column labels")
    row_ids, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split("\t")
        if len(fields) != len(header):
            raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, "
                             f"found {len(fields)}")
        row = []
        for col, text in enumerate(fields[1:]):
            try:
                row.append(dtype(text))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: column {col_ids[col]!r} "
                                 f"holds unparseable value {text!r}") from None
        row_ids.append(fields[0])
        rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.array(rows, dtype=dtype), row_ids, col_ids


def ingest_matrix(path) -> BetaMatrix:
    """Read a matrix of values in [0, 1]; boundary values are clamped."""
    values, rows, cols = read_matrix(path)
    bad = ~np.isfinite(values) | (values < 0.0) | (values > 1.0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise ParseError(f"{path}: value {values[i, j]!r} at row {rows[i]!r}, "
                         f"column {cols[j]!r} is outside [0, 1]")
    return BetaMatrix.from_array(values, rows, cols)


@dataclass
class ReadCounts:
    """Methylated (d) and unmethylated (u) read counts with smoothing s0."""

    methylated: np.ndarray
    unmethylated: np.ndarray
    s0: float = 0.1

    def __post_init__(self):
        self.methylated = np.asarray(self.methylated)
        self.unmethylated = np.asarray(self.unmethylated)
        if self.methylated.shape != self.unmethylated.shape:
            raise DomainError("read count matrices must have the same shape")
        for arr in (self.methylated, self.unmethylated):
            if np.any(arr < 0) or np.any(arr != np.round(arr)):
                raise DomainError("read counts must be non-negative integers")
        if not self.s0 > 0:
            raise DomainError(f"smoothing s0 must be positive, got {self.s0}")


def betas_from_reads(rc: ReadCounts, row_ids=None, col_ids=None) -> BetaMatrix:
    """beta_ij = (s0 + d_ij) / (2 s0 + d_ij + u_ij)."""
    d = rc.methylated.astype(float)
    u = rc.unmethylated.astype(float)
    return BetaMatrix.from_array((rc.s0 + d) / (2.0 * rc.s0 + d + u), row_ids, col_ids)


def top_variance(beta: BetaMatrix, n: int) -> BetaMatrix:
    """Keep the ``n`` columns with the largest sample variance (ddof=1), in input order."""
    if n < 1:
        raise DomainError(f"--top-variance must be positive, got {n}")
    if n >= beta.shape[1]:
        return beta
    var = beta.values.var(axis=0, ddof=1) if beta.shape[0] > 1 else np.zeros(beta.shape[1])
    keep = np.sort(np.argsort(-var, kind="stable")[:n])
    return BetaMatrix(beta.values[:, keep], list(beta.row_ids),
                      [beta.col_ids[j] for j in keep], beta.n_clamped)


def write_mask(path, cells) -> None:
    cells = np.asarray(cells, dtype=np.int64).reshape(-1, 2)
    with open(path, "w") as fh:
        fh.write("row\tcol\n")
        for i, j in cells:
            fh.write(f"{i}\t{j}\n")


def read_mask(path) -> np.ndarray:
    """Read a two-column (row, col) index list written by :func:`write_mask`."""
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: no such file")
    cells = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or lineno == 1:
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise ParseError(f"{path}:{lineno}: expected 2 fields, found {len(fields)}")
            try:
                cells.append((int(fields[0]), int(fields[1])))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: indices must be integers") from None
    return np.array(cells, dtype=np.int64).reshape(-1, 2)


def write_manifest(path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key, value in entries.items():
            if isinstance(value, float):
                value = _fmt(value)
            fh.write(f"{key}\t{value}\n")


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: no such file")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, sep, value = line.partition("\t")
            if not sep:
                key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"{path}:{lineno}: expected 'key<TAB>value'")
            out[key.strip()] = value.strip()
    return out


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_chain(path, chain: PosteriorChain, row_ids, col_ids) -> None:
    """Snapshots in long format: one line per (sweep, factor, label) with K values.

    Theta rows are labeled by sample, Phi columns by gene.
    """
    k = chain.hyper.K
    with open(path, "w") as fh:
        fh.write("\t".join(["sweep", "factor", "label"] + [f"k{c}" for c in range(k)]) + "\n")
        for sweep, st in chain.snapshots:
            for name, mat, labels in (("theta1", st.theta1, row_ids),
                                      ("theta2", st.theta2, row_ids),
                                      ("phi", st.phi.T, col_ids)):
                for label, vals in zip(labels, mat):
                    fh.write("\t".join([str(sweep), name, str(label)]
                                       + [_fmt(v) for v in vals]) + "\n")


def _config_from(manifest: dict) -> tuple:
    try:
        hyper = Hyperparams(eps1=float(manifest["eps1"]), eps2=float(manifest["eps2"]),
                            a0=float(manifest["a0"]), b0=float(manifest["b0"]),
                            e0=float(manifest["e0"]), f0=float(manifest["f0"]),
                            K=int(manifest["k"]))
        config = SamplerConfig(burnin=int(manifest["burnin"]), total=int(manifest["total"]),
                               thin=int(manifest["thin"]), seed=int(manifest["seed"]))
    except KeyError as err:
        raise ParseError(f"manifest lacks key {err.args[0]!r}") from None
    return hyper, config


def read_chain(directory):
    """Load a fit directory; returns (PosteriorChain, row_ids, col_ids)."""
    directory = Path(directory)
    chain_path = directory / "chain.tsv"
    if not chain_path.is_file():
        raise ParseError(f"{directory}: no chain.tsv; is this a fit output directory?")
    hyper, config = _config_from(read_manifest(directory / "manifest.tsv"))
    k = hyper.K
    blocks = {}
    order = []
    with open(chain_path) as fh:
        header = fh.readline().rstrip("\n").split("\t")
        if len(header) != 3 + k:
            raise ParseError(f"{chain_path}: header has {len(header) - 3} components, "
                             f"manifest says {k}")
        for lineno, line in enumerate(fh, start=2):
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3 + k:
                raise ParseError(f"{chain_path}:{lineno}: expected {3 + k} fields")
            try:
                sweep = int(fields[0])
                vals = [float(t) for t in fields[3:]]
            except ValueError:
                raise ParseError(f"{chain_path}:{lineno}: unparseable number") from None
            if sweep not in blocks:
                blocks[sweep] = {"theta1": ([], []), "theta2": ([], []), "phi": ([], [])}
                order.append(sweep)
            if fields[1] not in blocks[sweep]:
                raise ParseError(f"{chain_path}:{lineno}: unknown factor {fields[1]!r}")
            labels, rows = blocks[sweep][fields[1]]
            labels.append(fields[2])
            rows.append(vals)
    if not order:
        raise ParseError(f"{chain_path}: chain holds no snapshots")
    snapshots = []
    row_ids = blocks[order[0]]["theta1"][0]
    col_ids = blocks[order[0]]["phi"][0]
    for sweep in order:
        b = blocks[sweep]
        snapshots.append((sweep, FactorState(np.array(b["theta1"][1]),
                                             np.array(b["theta2"][1]),
                                             np.array(b["phi"][1]).T)))
    return PosteriorChain(snapshots, config, hyper), row_ids, col_ids


@contextmanager
def staged_output(target):
    """Yield a temporary directory that replaces ``target`` only on success.

    ``target`` must be absent or an empty directory. On any exception the
    staging directory is removed and ``target`` is left untouched.
    """
    target = Path(target)
    if target.exists() and (not target.is_dir() or any(target.iterdir())):
        raise FileExistsError(f"output {target} exists and is not an empty directory")
    target.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    staging.chmod(0o755)
    if target.exists():
        target.rmdir()
    os.replace(staging, target)
