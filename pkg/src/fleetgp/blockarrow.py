"""Schur-complement solver for block-arrow covariance matrices.

The fleet covariance, ordered with all source blocks first and the target
block last, couples blocks only between the target and each source:

    C = [[D_1          E_1],
         [     ...     ...],
         [         D_S E_S],
         [E_1^T ... E_S^T F]]

Solving C x = b therefore needs one factorization per diagonal block plus a
Schur complement on the target block, for O(sum_m N_m^3) work instead of the
O((sum_m N_m)^3) of a dense factorization.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .gp import JITTER_LEVELS, FactorizationError, chol_with_jitter

__all__ = ["BlockArrowFactor", "block_arrow_solve", "assemble_dense"]


def _stacked_chol_with_jitter(blocks: np.ndarray):
    """Cholesky of a (S, n, n) stack, jittering every block on failure."""
    attempted = []
    eye = np.eye(blocks.shape[-1])
    for jitter in JITTER_LEVELS:
        attempted.append(jitter)
        try:
            M = blocks if jitter == 0.0 else blocks + jitter * eye
            return np.linalg.cholesky(M), jitter
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(attempted)


def _stacked_cho_solve(L: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve (L L^T) X = B for a (S, n, n) factor stack and (S, n, k) rhs."""
    tmp = np.linalg.solve(L, B)
    return np.linalg.solve(np.swapaxes(L, -1, -2), tmp)


class BlockArrowFactor:
    """Reusable factorization of a block-arrow SPD matrix.

    Source blocks must be listed in their storage order; the target block is
    the pivot of the Schur complement and always sits last. Equal-sized source
    blocks are factored as one stacked batch, which keeps the per-member cost
    of small fleets dominated by a handful of vectorized calls.
    """

    def __init__(self, source_blocks, couplings, target_block):
        if len(source_blocks) != len(couplings):
            raise ValueError("need one coupling block per source block")
        self.target_block = np.asarray(target_block, dtype=float)
        nt = self.target_block.shape[0]
        self.sizes = [np.asarray(b).shape[0] for b in source_blocks]
        self.n_target = nt
        self.n = sum(self.sizes) + nt
        self._offsets = np.concatenate(([0], np.cumsum(self.sizes)))

        sizes = set(self.sizes)
        self._stacked = len(sizes) == 1 and len(source_blocks) > 0
        schur = self.target_block.copy()
        if self._stacked:
            D = np.asarray(source_blocks, dtype=float)
            E = np.asarray(couplings, dtype=float)
            self._L, self.jitter = _stacked_chol_with_jitter(D)
            self._DinvE = _stacked_cho_solve(self._L, E)
            schur -= np.einsum("sij,sik->jk", E, self._DinvE)
            self._E = E
        else:
            self._L = []
            self._DinvE = []
            self._E = [np.asarray(Ei, dtype=float) for Ei in couplings]
            self.jitter = 0.0
            for Di, Ei in zip(source_blocks, self._E):
                Li, jit = chol_with_jitter(np.asarray(Di, dtype=float))
                self.jitter = max(self.jitter, jit)
                DinvEi = sla.cho_solve((Li, True), Ei) if Ei.size else np.zeros_like(Ei)
                self._L.append(Li)
                self._DinvE.append(DinvEi)
                schur -= Ei.T @ DinvEi
        schur = 0.5 * (schur + schur.T)
        self._schur_L, self.schur_jitter = chol_with_jitter(schur)

    def solve(self, b) -> np.ndarray:
        """Return C^{-1} b for one or many right-hand sides."""
        b = np.asarray(b, dtype=float)
        single = b.ndim == 1
        B = b[:, None] if single else b
        if B.shape[0] != self.n:
            raise ValueError(f"rhs has {B.shape[0]} rows, expected {self.n}")
        ns = self._offsets[-1]
        Bs, Bt = B[:ns], B[ns:]

        if self._stacked:
            S, n = len(self.sizes), self.sizes[0] if self.sizes else 0
            U = _stacked_cho_solve(self._L, Bs.reshape(S, n, -1))
            rhs_t = Bt - np.einsum("sij,sik->jk", self._E, U)
            Yt = sla.cho_solve((self._schur_L, True), rhs_t)
            Ys = U - self._DinvE @ Yt
            out = np.concatenate([Ys.reshape(ns, -1), Yt], axis=0)
        else:
            U = []
            rhs_t = Bt.copy()
            for i, Li in enumerate(self._L):
                bi = Bs[self._offsets[i] : self._offsets[i + 1]]
                ui = sla.cho_solve((Li, True), bi)
                U.append(ui)
                rhs_t -= self._E[i].T @ ui
            Yt = sla.cho_solve((self._schur_L, True), rhs_t)
            parts = [ui - self._DinvE[i] @ Yt for i, ui in enumerate(U)]
            parts.append(Yt)
            out = np.concatenate(parts, axis=0) if parts else Yt
        return out[:, 0] if single else out


def block_arrow_solve(source_blocks, couplings, target_block, rhs) -> np.ndarray:
    """One-shot solve of the block-arrow system against `rhs`."""
    return BlockArrowFactor(source_blocks, couplings, target_block).solve(rhs)


def assemble_dense(source_blocks, couplings, target_block) -> np.ndarray:
    """Materialize the full matrix; the dense oracle for tests/benchmarks."""
    sizes = [np.asarray(b).shape[0] for b in source_blocks]
    target_block = np.asarray(target_block, dtype=float)
    nt = target_block.shape[0]
    n = sum(sizes) + nt
    C = np.zeros((n, n))
    off = 0
    for Di, Ei in zip(source_blocks, couplings):
        Di = np.asarray(Di, dtype=float)
        Ei = np.asarray(Ei, dtype=float)
        k = Di.shape[0]
        C[off : off + k, off : off + k] = Di
        C[off : off + k, n - nt :] = Ei
        C[n - nt :, off : off + k] = Ei.T
        off += k
    C[n - nt :, n - nt :] = target_block
    return C
