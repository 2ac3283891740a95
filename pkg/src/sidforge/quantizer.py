"""Hierarchical residual codebooks with a product-quantized tail.

The fit pipeline: level 0 k-means on raw vectors, each later level on the
residuals of the previous one (optionally size-balanced on the last
level), then an orthonormal rotation plus per-subspace code tables fit on
the final residuals by alternating optimization. Encoding is greedy
nearest-centroid descent and is pure given a frozen codebook.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .embedding import Catalog
from .kmeans import balanced_kmeans_fit, kmeans_fit
from .sids import Sid, SidScheme

_MAGIC = b"SIDF"
_VERSION = 1


@dataclass
class RqCodebook:
    levels: list[np.ndarray]               # level l: (W_l, d) centroid table
    level_sizes: tuple[int, ...]
    balanced_last: bool

    def __post_init__(self) -> None:
        if len(self.levels) != len(self.level_sizes):
            raise ValueError("level table count does not match level_sizes")
        for table, w in zip(self.levels, self.level_sizes):
            if table.shape[0] != w:
                raise ValueError(f"level table has {table.shape[0]} rows, expected {w}")
            if not np.all(np.isfinite(table)):
                raise ValueError("non-finite centroid")

    @property
    def dim(self) -> int:
        return self.levels[0].shape[1]


@dataclass
class OpqCodebook:
    rotation: np.ndarray                    # (d, d), orthonormal
    subspaces: list[np.ndarray]             # per subspace: (codes, d/#subspaces)

    def __post_init__(self) -> None:
        d = self.rotation.shape[0]
        if self.rotation.shape != (d, d):
            raise ValueError("rotation must be square")
        err = float(np.max(np.abs(self.rotation.T @ self.rotation - np.eye(d))))
        if err > 1e-5:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.2e})")
        if sum(t.shape[1] for t in self.subspaces) != d:
            raise ValueError("subspace dims do not sum to d")

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    @property
    def code_sizes(self) -> tuple[int, ...]:
        return tuple(t.shape[0] for t in self.subspaces)


@dataclass
class RqOpqCodebook:
    rq: RqCodebook
    opq: OpqCodebook
    build_metadata: dict[str, Any] = field(default_factory=dict)
    # training-catalog codes from the fit assignments; the balanced level's
    # capacity constraint lives only here, greedy encode cannot reproduce it
    fit_sids: list[Sid] | None = None

    def __post_init__(self) -> None:
        if self.rq.dim != self.opq.dim:
            raise ValueError(f"rq dim {self.rq.dim} != opq dim {self.opq.dim}")

    @property
    def dim(self) -> int:
        return self.rq.dim

    @property
    def scheme(self) -> SidScheme:
        return SidScheme(self.rq.level_sizes, self.opq.code_sizes)


def rq_fit(
    catalog: Catalog | np.ndarray,
    level_sizes: Sequence[int],
    balanced_last: bool = True,
    iters: int = 25,
    seed: int = 0,
) -> tuple[RqCodebook, dict[str, Any]]:
    """Fit the residual hierarchy; returns the codebook and fit stats.

    Stats carry per-level mean squared residual norms (after subtracting
    that level) plus any oversized-level warnings.
    """
    codebook, stats, _, _ = _rq_fit_full(catalog, level_sizes, balanced_last, iters, seed)
    return codebook, stats


def _rq_fit_full(
    catalog: Catalog | np.ndarray,
    level_sizes: Sequence[int],
    balanced_last: bool,
    iters: int,
    seed: int,
) -> tuple[RqCodebook, dict[str, Any], np.ndarray, np.ndarray]:
    """rq_fit plus the per-level fit codes (n, L) and final fit residuals."""
    vectors = catalog.matrix if isinstance(catalog, Catalog) else np.asarray(catalog, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ValueError("catalog must be a nonempty (n, d) array")
    level_sizes = tuple(int(w) for w in level_sizes)
    if not level_sizes:
        raise ValueError("need at least one level")

    warnings: list[str] = []
    residual = vectors.copy()
    levels: list[np.ndarray] = []
    codes: list[np.ndarray] = []
    mean_sq_residual: list[float] = []
    for l, k in enumerate(level_sizes):
        if k > residual.shape[0]:
            warnings.append(f"level {l + 1} size {k} exceeds catalog size {residual.shape[0]}")
        last = l == len(level_sizes) - 1
        fit = balanced_kmeans_fit if (balanced_last and last) else kmeans_fit
        result = fit(residual, k, iters=iters, seed=seed + l)
        levels.append(result.centroids)
        codes.append(result.assignments)
        residual = residual - result.centroids[result.assignments]
        mean_sq_residual.append(float(np.mean(np.sum(residual**2, axis=1))))

    stats = {
        "levels": list(level_sizes),
        "balanced_last": balanced_last,
        "iters": iters,
        "seed": seed,
        "mean_sq_residual_per_level": mean_sq_residual,
        "warnings": warnings,
    }
    rq = RqCodebook(levels, level_sizes, balanced_last)
    return rq, stats, np.stack(codes, axis=1), residual


def rq_residuals(rq: RqCodebook, vectors: np.ndarray) -> np.ndarray:
    """Residuals after greedy descent through all hierarchy levels."""
    residual = np.asarray(vectors, dtype=np.float64).copy()
    for table in rq.levels:
        codes = _nearest(residual, table)
        residual -= table[codes]
    return residual


def _nearest(points: np.ndarray, table: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ table.T
        + np.sum(table**2, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def opq_fit(
    residuals: np.ndarray,
    subspaces: int = 2,
    codes_per_subspace: int = 256,
    outer_iters: int = 10,
    seed: int = 0,
    kmeans_iters: int = 25,
) -> tuple[OpqCodebook, dict[str, Any]]:
    """Alternate per-subspace k-means with Procrustes rotation updates.

    ``outer_iters`` counts rotation updates; a final code fit always runs,
    so 0 gives plain product quantization under the identity rotation.
    Inner k-means is warm-started between rounds, which keeps the
    reconstruction error non-increasing over outer iterations.
    """
    X = np.asarray(residuals, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("residual set must be a nonempty (n, d) array")
    n, d = X.shape
    if subspaces < 1 or d % subspaces != 0:
        raise ValueError(f"d={d} not divisible by {subspaces} subspaces")
    dsub = d // subspaces

    rotation = np.eye(d)
    tables: list[np.ndarray] | None = None
    errors: list[float] = []

    def fit_tables(rotated: np.ndarray, warm: list[np.ndarray] | None) -> list[np.ndarray]:
        out = []
        for s in range(subspaces):
            block = rotated[:, s * dsub:(s + 1) * dsub]
            if warm is None:
                res = kmeans_fit(block, codes_per_subspace, iters=kmeans_iters, seed=seed + s)
                out.append(res.centroids)
            else:
                out.append(_lloyd_warm(block, warm[s], kmeans_iters))
        return out

    def reconstruct(rotated: np.ndarray, tbls: list[np.ndarray]) -> np.ndarray:
        parts = []
        for s, table in enumerate(tbls):
            block = rotated[:, s * dsub:(s + 1) * dsub]
            parts.append(table[_nearest(block, table)])
        return np.concatenate(parts, axis=1)

    for _ in range(outer_iters):
        rotated = X @ rotation
        tables = fit_tables(rotated, tables)
        Y = reconstruct(rotated, tables)
        errors.append(float(np.mean(np.sum((rotated - Y) ** 2, axis=1))))
        # orthogonal Procrustes: rotation minimizing ||X R - Y||_F
        M = X.T @ Y
        if float(np.abs(M).max()) > 0.0:
            U, _, Vt = np.linalg.svd(M)
            rotation = U @ Vt
    rotated = X @ rotation
    tables = fit_tables(rotated, tables)
    Y = reconstruct(rotated, tables)
    errors.append(float(np.mean(np.sum((rotated - Y) ** 2, axis=1))))

    stats = {
        "subspaces": subspaces,
        "codes_per_subspace": codes_per_subspace,
        "outer_iters": outer_iters,
        "seed": seed,
        "mean_sq_error_per_outer_iter": errors,
    }
    return OpqCodebook(rotation, tables), stats


def _lloyd_warm(points: np.ndarray, centroids: np.ndarray, iters: int) -> np.ndarray:
    """Plain Lloyd refinement from existing centroids (no reseeding)."""
    cents = centroids.copy()
    prev = None
    for _ in range(max(1, iters)):
        assign = _nearest(points, cents)
        k = cents.shape[0]
        sums = np.zeros_like(cents)
        np.add.at(sums, assign, points)
        counts = np.bincount(assign, minlength=k).astype(np.float64)
        nonempty = counts > 0
        cents[nonempty] = sums[nonempty] / counts[nonempty, None]
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
    return cents


def fit_codebook(
    catalog: Catalog | np.ndarray,
    level_sizes: Sequence[int] = (4096, 1024, 512),
    balanced_last: bool = True,
    opq_subspaces: int = 2,
    opq_codes: int = 256,
    iters: int = 25,
    opq_outer_iters: int = 10,
    seed: int = 0,
) -> RqOpqCodebook:
    """Full RQ + residual-OPQ fit over one catalog.

    The returned codebook carries ``fit_sids``: the training catalog's
    codes taken from the fit assignments (row order preserved). For a
    balanced last level these reflect the capacity constraint, which a
    later greedy re-encode would not.
    """
    vectors = catalog.matrix if isinstance(catalog, Catalog) else np.asarray(catalog, dtype=np.float64)
    rq, rq_stats, rq_codes, fit_residuals = _rq_fit_full(
        vectors, level_sizes, balanced_last, iters=iters, seed=seed
    )
    opq, opq_stats = opq_fit(
        fit_residuals, opq_subspaces, opq_codes, outer_iters=opq_outer_iters, seed=seed
    )
    rotated = fit_residuals @ opq.rotation
    opq_codes_cols = []
    offset = 0
    for table in opq.subspaces:
        dsub = table.shape[1]
        opq_codes_cols.append(_nearest(rotated[:, offset:offset + dsub], table))
        offset += dsub
    fit_sids = [
        Sid(tuple(int(c) for c in rq_codes[i]),
            tuple(int(col[i]) for col in opq_codes_cols))
        for i in range(vectors.shape[0])
    ]
    meta = {
        "dim": int(vectors.shape[1]),
        "n_fit_vectors": int(vectors.shape[0]),
        "seed": seed,
        "rq": rq_stats,
        "opq": opq_stats,
    }
    return RqOpqCodebook(rq, opq, meta, fit_sids=fit_sids)


def encode(embedding: np.ndarray, codebook: RqOpqCodebook) -> Sid:
    """Greedy nearest-centroid descent; ties break to the lowest index."""
    vec = np.asarray(embedding, dtype=np.float64)
    if vec.shape != (codebook.dim,):
        raise ValueError(f"embedding has shape {vec.shape}, codebook dim is {codebook.dim}")
    return encode_batch(vec[None, :], codebook)[0]


def encode_batch(vectors: np.ndarray, codebook: RqOpqCodebook) -> list[Sid]:
    vecs = np.asarray(vectors, dtype=np.float64)
    if vecs.ndim != 2 or vecs.shape[1] != codebook.dim:
        raise ValueError(f"expected (n, {codebook.dim}) array, got {vecs.shape}")
    residual = vecs.copy()
    rq_codes = []
    for table in codebook.rq.levels:
        codes = _nearest(residual, table)
        residual -= table[codes]
        rq_codes.append(codes)
    rotated = residual @ codebook.opq.rotation
    opq_codes = []
    offset = 0
    for table in codebook.opq.subspaces:
        dsub = table.shape[1]
        block = rotated[:, offset:offset + dsub]
        opq_codes.append(_nearest(block, table))
        offset += dsub
    out = []
    for i in range(vecs.shape[0]):
        out.append(Sid(
            rq=tuple(int(c[i]) for c in rq_codes),
            opq=tuple(int(c[i]) for c in opq_codes),
        ))
    return out


def lookup_centroids(sid: Sid, codebook: RqOpqCodebook) -> list[np.ndarray]:
    """Per-level hierarchy centroids for a SID; product digits are excluded."""
    if len(sid.rq) != len(codebook.rq.levels):
        raise ValueError(
            f"SID has {len(sid.rq)} hierarchy digits, codebook has {len(codebook.rq.levels)} levels"
        )
    out = []
    for code, table in zip(sid.rq, codebook.rq.levels):
        if not 0 <= code < table.shape[0]:
            raise ValueError(f"code {code} outside [0, {table.shape[0]})")
        out.append(table[code].copy())
    return out


def reconstruct(sid: Sid, codebook: RqOpqCodebook) -> np.ndarray:
    """Sum of hierarchy centroids plus the de-rotated product centroids."""
    vec = np.sum(lookup_centroids(sid, codebook), axis=0)
    parts = []
    for code, table in zip(sid.opq, codebook.opq.subspaces):
        if not 0 <= code < table.shape[0]:
            raise ValueError(f"code {code} outside [0, {table.shape[0]})")
        parts.append(table[code])
    if parts:
        vec = vec + np.concatenate(parts) @ codebook.opq.rotation.T
    return vec


def save_codebook(codebook: RqOpqCodebook, path: str | Path) -> None:
    """Versioned binary: magic, JSON config block, then f32 tables in order
    (hierarchy levels, rotation, subspace tables). Metadata goes to a JSON
    sidecar at ``<path>.meta.json``."""
    path = Path(path)
    config = {
        "dim": codebook.dim,
        "level_sizes": list(codebook.rq.level_sizes),
        "balanced_last": codebook.rq.balanced_last,
        "opq_code_sizes": list(codebook.opq.code_sizes),
    }
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for table in codebook.rq.levels:
            f.write(table.astype("<f4").tobytes())
        f.write(codebook.opq.rotation.astype("<f4").tobytes())
        for table in codebook.opq.subspaces:
            f.write(table.astype("<f4").tobytes())
    sidecar = path.with_name(path.name + ".meta.json")
    sidecar.write_text(
        json.dumps(codebook.build_metadata, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


def load_codebook(path: str | Path) -> RqOpqCodebook:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        (blob_len,) = struct.unpack("<I", f.read(4))
        config = json.loads(f.read(blob_len).decode("utf-8"))
        d = int(config["dim"])

        def read_table(rows: int, cols: int) -> np.ndarray:
            raw = f.read(rows * cols * 4)
            if len(raw) != rows * cols * 4:
                raise ValueError(f"{path}: truncated table")
            return np.frombuffer(raw, dtype="<f4").reshape(rows, cols).astype(np.float64)

        levels = [read_table(int(w), d) for w in config["level_sizes"]]
        rotation = read_table(d, d)
        code_sizes = [int(c) for c in config["opq_code_sizes"]]
        dsub = d // len(code_sizes) if code_sizes else d
        subspaces = [read_table(c, dsub) for c in code_sizes]
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes")

    rq = RqCodebook(levels, tuple(int(w) for w in config["level_sizes"]), bool(config["balanced_last"]))
    meta_path = path.with_name(path.name + ".meta.json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return RqOpqCodebook(rq, OpqCodebook(rotation, subspaces), meta)
