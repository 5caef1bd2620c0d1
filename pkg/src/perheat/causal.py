"""Uniform time grids and block-lower-triangular Toeplitz operators."""
from dataclasses import dataclass
import json
import math

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .errors import SingularBlockError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform steps ``t_k = k T / M``; slab k is ``(t_k, t_{k+1}]``.

    Densities are (M, N) arrays whose row k holds the nodal value at
    ``t_{k+1}``; in between they are linear in time and they vanish at t = 0.
    """

    T: float
    M: int

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError(f"T must be positive, got {self.T}")
        if int(self.M) != self.M or self.M < 2:
            raise ValueError(f"M must be an integer >= 2, got {self.M}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self):
        return self.T / self.M

    @property
    def t(self):
        return np.arange(self.M + 1) * self.dt

    @property
    def colloc(self):
        """Collocation times t_1..t_M (one per slab)."""
        return self.t[1:]


def sample_density(func, s, tg):
    """Density grid ``func(t_{k+1}, s_i)`` of shape (M, N)."""
    return np.asarray(func(tg.colloc[:, None], np.asarray(s)[None, :]), dtype=np.float64) * np.ones(
        (tg.M, len(s)))


class CausalOperator:
    """Block-lower-triangular Toeplitz operator ``(A rho)_k = sum_m A_m rho_{k-m}``.

    ``blocks`` has shape (M, n_out, n_in). Rectangular blocks (e.g. targets
    off the boundary) are allowed.
    """

    def __init__(self, kind, blocks):
        blocks = np.asarray(blocks, dtype=np.float64)
        if blocks.ndim != 3:
            raise ValueError("blocks must have shape (M, n_out, n_in)")
        self.kind = kind
        self.blocks = blocks
        self.blocks.setflags(write=False)

    @property
    def M(self):
        return self.blocks.shape[0]

    @property
    def shape(self):
        return self.blocks.shape

    def apply(self, rho):
        rho = np.asarray(rho, dtype=np.float64)
        M, n_out, n_in = self.blocks.shape
        if rho.shape != (M, n_in):
            raise ValueError(f"density shape {rho.shape} does not match operator {(M, n_in)}")
        out = np.empty((M, n_out))
        for k in range(M):
            out[k] = np.einsum("mij,mj->i", self.blocks[: k + 1], rho[k::-1])
        return out

    __call__ = apply

    def compose(self, other):
        """Operator product ``self o other`` (still causal Toeplitz)."""
        if self.M != other.M or self.blocks.shape[2] != other.blocks.shape[1]:
            raise ValueError("incompatible operators")
        out = np.zeros((self.M, self.blocks.shape[1], other.blocks.shape[2]))
        for m in range(self.M):
            out[m] = np.einsum("lij,ljk->ik", self.blocks[m::-1][: m + 1], other.blocks[: m + 1])
        return CausalOperator(f"({self.kind})({other.kind})", out)

    def __add__(self, other):
        return CausalOperator(f"{self.kind}+{other.kind}", self.blocks + other.blocks)

    def __sub__(self, other):
        return CausalOperator(f"{self.kind}-{other.kind}", self.blocks - other.blocks)

    def __mul__(self, c):
        return CausalOperator(self.kind, float(c) * self.blocks)

    __rmul__ = __mul__

    def __neg__(self):
        return CausalOperator(self.kind, -self.blocks)

    @classmethod
    def identity(cls, M, N, scale=1.0):
        b = np.zeros((M, N, N))
        b[0] = scale * np.eye(N)
        return cls("I", b)

    def to_dense(self):
        M, p, n = self.blocks.shape
        A = np.zeros((M * p, M * n))
        for k in range(M):
            for j in range(k + 1):
                A[k * p:(k + 1) * p, j * n:(j + 1) * n] = self.blocks[k - j]
        return A

    def norm_inf(self):
        """Induced infinity norm of the full causal matrix."""
        return float(np.max(np.abs(self.blocks).sum(axis=(0, 2))))

    def dump(self, path, fmt="csv"):
        """Write the blocks to ``path``.

        ``csv``: rows ``m,i,j,value`` (block index outermost, then row-major).
        ``bin``: raw little-endian float64 in C order with shape (M, n_out,
        n_in), plus a JSON sidecar ``path + '.json'`` describing the layout.
        """
        if fmt == "csv":
            M, p, n = self.blocks.shape
            m, i, j = np.meshgrid(np.arange(M), np.arange(p), np.arange(n), indexing="ij")
            with open(path, "w") as fh:
                fh.write("m,i,j,value\n")
                for row in zip(m.ravel(), i.ravel(), j.ravel(), self.blocks.ravel()):
                    fh.write("%d,%d,%d,%.17g\n" % row)
        elif fmt == "bin":
            self.blocks.astype("<f8").tofile(path)
            meta = {"kind": self.kind, "shape": list(self.blocks.shape), "dtype": "<f8", "order": "C",
                    "layout": "block index outermost, then row, then column"}
            with open(str(path) + ".json", "w") as fh:
                json.dump(meta, fh, indent=2)
        else:
            raise ValueError(f"unknown dump format {fmt!r}")

    @classmethod
    def load(cls, path):
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        blocks = np.fromfile(path, dtype=meta["dtype"]).reshape(meta["shape"])
        return cls(meta["kind"], blocks)


class CausalSolver:
    """Forward marching for ``A rho = f`` with one LU of the slab-0 block."""

    def __init__(self, op, cond_limit=1e13):
        if op.blocks.shape[1] != op.blocks.shape[2]:
            raise ValueError("causal solve needs square blocks")
        self.op = op
        b0 = op.blocks[0]
        with np.errstate(all="ignore"):
            self.condition = float(np.linalg.cond(b0, 1))
        if not np.isfinite(self.condition) or self.condition > cond_limit:
            raise SingularBlockError(
                f"diagonal block of {op.kind} is numerically singular "
                f"(1-norm condition {self.condition:.3e})", self.condition)
        self._lu = lu_factor(b0)

    def solve_block(self, rhs):
        """Solve with the slab-0 block only (``rhs`` may have several columns)."""
        return lu_solve(self._lu, rhs)

    def solve(self, f):
        f = np.asarray(f, dtype=np.float64)
        blocks = self.op.blocks
        M = blocks.shape[0]
        if f.shape != (M, blocks.shape[1]):
            raise ValueError(f"right-hand side shape {f.shape} does not match {(M, blocks.shape[1])}")
        rho = np.zeros_like(f)
        for k in range(M):
            r = f[k]
            if k:
                r = r - np.einsum("mij,mj->i", blocks[1: k + 1], rho[k - 1::-1])
            rho[k] = lu_solve(self._lu, r)
        return rho
