"""Shift-matrix graph bases for frame-wise spectral transforms.

A length-N frame is treated as a signal on a directed cyclic graph whose
adjacency A_k links each sample index to its next k neighbours (mod N).
Two Fourier-style bases are derived from A_k:

* ``decompose_svd`` - the real orthogonal left/right singular matrices
  (Psi, Gamma) of A_k, canonicalized so the result is reproducible down
  to the byte.  Psi is the analysis basis used by the enhancement
  pipeline; real input stays real under it.
* ``decompose_evd`` - the complex unitary eigenbasis of A_k.  A_k is
  circulant, so this is the DFT matrix with closed-form eigenvalues;
  no iterative eigensolver is involved.

Bases persist to a small binary file (magic ``GFTB``) whose trailing
SHA-256 makes corruption and drift detectable; a separate fingerprint of
(n, k, Psi) ties downstream spectrograms and model checkpoints to the
exact basis that produced them.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DecompositionError,
    DimensionError,
    FingerprintMismatchError,
    MalformedHeaderError,
    ParameterError,
    TruncatedPayloadError,
    VersionMismatchError,
)

BASIS_MAGIC = b"GFTB"
BASIS_VERSION = 1
TOPOLOGY_CYCLIC_FORWARD = 1

ORTHOGONALITY_TOL = 1e-10
RECONSTRUCTION_TOL = 1e-9

_HEADER = struct.Struct("<IIII")  # version, n, k, topology (after 4-byte magic)


@dataclass(frozen=True)
class AdjacencyMatrix:
    """0-1 adjacency of the k-neighbour forward cyclic shift graph.

    entries[i, j] == 1 iff ((j - i) mod n) in {1, .., k}.  The matrix is
    circulant with constant row/column sum k and zero diagonal.
    """

    n: int
    k: int
    entries: np.ndarray

    def __post_init__(self):
        if self.entries.shape != (self.n, self.n):
            raise DimensionError(
                f"adjacency entries must be {self.n}x{self.n}, got {self.entries.shape}"
            )
        if not np.array_equal(self.entries, _shift_pattern(self.n, self.k)):
            raise ParameterError(
                "adjacency entries do not match the forward cyclic k-neighbour pattern"
            )
        self.entries.setflags(write=False)


@dataclass(frozen=True)
class GraphBasis:
    """Canonical SVD factors of an adjacency matrix: A = Psi diag(sigma) Gamma^T.

    Psi and Gamma are orthogonal; sigma is non-increasing and non-negative.
    Each Psi column has its largest-magnitude entry positive, and columns
    sharing an exactly equal singular value are in lexicographic order, so
    repeated decompositions of the same input are byte-identical.

    ``fingerprint`` is the SHA-256 of (n, k, Psi bytes); spectrograms and
    checkpoints carry it to guarantee the same Psi is used forward and back.
    """

    n: int
    k: int
    psi: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    fingerprint: str

    def __post_init__(self):
        for name, arr, shape in (
            ("psi", self.psi, (self.n, self.n)),
            ("sigma", self.sigma, (self.n,)),
            ("gamma", self.gamma, (self.n, self.n)),
        ):
            if arr.shape != shape:
                raise DimensionError(f"{name} must have shape {shape}, got {arr.shape}")
            arr.setflags(write=False)
        if not self.fingerprint:
            raise ParameterError("fingerprint must be non-empty")


@dataclass(frozen=True)
class ComplexGraphBasis:
    """Unitary eigenbasis of a circulant adjacency: A = U diag(lambda) U^H.

    Column m of ``u`` is the length-n DFT vector for frequency index m and
    ``eigenvalues[m] = sum_{d=1..k} exp(-2 pi i m d / n)``.
    """

    n: int
    k: int
    u: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        if self.u.shape != (self.n, self.n):
            raise DimensionError(f"u must be {self.n}x{self.n}, got {self.u.shape}")
        if self.eigenvalues.shape != (self.n,):
            raise DimensionError("eigenvalues must be a length-n vector")
        self.u.setflags(write=False)
        self.eigenvalues.setflags(write=False)


def _shift_pattern(n: int, k: int) -> np.ndarray:
    rows = np.arange(n)
    a = np.zeros((n, n), dtype=np.float64)
    for d in range(1, k + 1):
        a[rows, (rows + d) % n] = 1.0
    return a


def build_adjacency(n: int, k: int) -> AdjacencyMatrix:
    """Build the n x n forward cyclic shift adjacency with k neighbour links.

    Raises ParameterError unless n >= 2 and 1 <= k < n.
    """
    if not isinstance(n, (int, np.integer)) or not isinstance(k, (int, np.integer)):
        raise ParameterError("n and k must be integers")
    if n < 2:
        raise ParameterError(f"n must be >= 2, got {n}")
    if k < 1 or k >= n:
        raise ParameterError(f"k must satisfy 1 <= k < n, got k={k}, n={n}")
    return AdjacencyMatrix(n=int(n), k=int(k), entries=_shift_pattern(int(n), int(k)))


def basis_fingerprint(n: int, k: int, psi: np.ndarray) -> str:
    """SHA-256 hex digest binding (n, k) and the exact bytes of Psi."""
    h = hashlib.sha256()
    h.update(struct.pack("<II", n, k))
    h.update(np.ascontiguousarray(psi, dtype="<f8").tobytes())
    return h.hexdigest()


def _canonicalize(u: np.ndarray, s: np.ndarray, vt: np.ndarray):
    """Fix the sign and tied-column order ambiguities of an SVD in place.

    Sign: the largest-magnitude entry of each u column (first such row on
    ties) is made positive; the paired vt row flips with it.  Order: runs of
    exactly equal singular values are permuted so the canonicalized u
    columns are in ascending lexicographic order.
    """
    n = s.shape[0]
    for j in range(n):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0.0:
            u[:, j] = -u[:, j]
            vt[j, :] = -vt[j, :]
    start = 0
    while start < n:
        stop = start
        while stop + 1 < n and s[stop + 1] == s[start]:
            stop += 1
        if stop > start:
            idx = sorted(range(start, stop + 1), key=lambda c: tuple(u[:, c]))
            u[:, start : stop + 1] = u[:, idx]
            vt[start : stop + 1, :] = vt[idx, :]
        start = stop + 1


def decompose_svd(a: AdjacencyMatrix) -> GraphBasis:
    """Compute the canonical singular value decomposition of an adjacency.

    The factors are verified (orthogonality within 1e-10, reconstruction of
    the input within 1e-9) before being returned; a convergence failure or a
    verification miss raises DecompositionError rather than handing back a
    broken basis.
    """
    try:
        u, s, vt = np.linalg.svd(a.entries)
    except np.linalg.LinAlgError as exc:
        raise DecompositionError(f"SVD did not converge for n={a.n}, k={a.k}") from exc

    u = np.ascontiguousarray(u)
    s = np.ascontiguousarray(s)
    vt = np.ascontiguousarray(vt)
    _canonicalize(u, s, vt)

    eye = np.eye(a.n)
    if np.max(np.abs(u.T @ u - eye)) > ORTHOGONALITY_TOL:
        raise DecompositionError("left singular matrix failed the orthogonality check")
    if np.max(np.abs(vt @ vt.T - eye)) > ORTHOGONALITY_TOL:
        raise DecompositionError("right singular matrix failed the orthogonality check")
    if np.max(np.abs((u * s) @ vt - a.entries)) > RECONSTRUCTION_TOL:
        raise DecompositionError("singular factors do not reconstruct the adjacency")

    gamma = np.ascontiguousarray(vt.T)
    return GraphBasis(
        n=a.n,
        k=a.k,
        psi=u,
        sigma=s,
        gamma=gamma,
        fingerprint=basis_fingerprint(a.n, a.k, u),
    )


def decompose_evd(a: AdjacencyMatrix) -> ComplexGraphBasis:
    """Diagonalize a circulant adjacency in closed form.

    Column m of U is the DFT vector exp(-2 pi i j m / n) / sqrt(n), so
    U is unitary and symmetric, and the eigenvalue for frequency index m
    is the finite geometric sum over the k shift powers.  Exact and
    deterministic; no eigensolver ordering ambiguity.
    """
    n, k = a.n, a.k
    j = np.arange(n)
    u = np.exp(-2j * np.pi * np.outer(j, j) / n) / np.sqrt(n)
    d = np.arange(1, k + 1)
    eigenvalues = np.exp(-2j * np.pi * np.outer(j, d) / n).sum(axis=1)
    return ComplexGraphBasis(n=n, k=k, u=u, eigenvalues=eigenvalues)


def circulant_singular_oracle(a: AdjacencyMatrix) -> np.ndarray:
    """Singular values of a circulant matrix via the DFT of its first row.

    Independent check route for decompose_svd: sorted (non-increasing)
    magnitudes of fft(first row).  Test-support code; not used by the
    pipeline itself.
    """
    mags = np.abs(np.fft.fft(a.entries[0]))
    return np.sort(mags)[::-1]


def save_basis(basis: GraphBasis, destination) -> None:
    """Serialize a basis to ``destination`` (path or path-like).

    Layout (little-endian): magic ``GFTB``, u32 version, u32 n, u32 k,
    u32 topology id, Psi row-major f64, sigma f64, Gamma row-major f64,
    then the SHA-256 of everything before it.
    """
    body = bytearray()
    body += BASIS_MAGIC
    body += _HEADER.pack(BASIS_VERSION, basis.n, basis.k, TOPOLOGY_CYCLIC_FORWARD)
    body += np.ascontiguousarray(basis.psi, dtype="<f8").tobytes()
    body += np.ascontiguousarray(basis.sigma, dtype="<f8").tobytes()
    body += np.ascontiguousarray(basis.gamma, dtype="<f8").tobytes()
    body += hashlib.sha256(bytes(body)).digest()
    Path(destination).write_bytes(bytes(body))


def load_basis(source) -> GraphBasis:
    """Load and verify a basis file written by save_basis.

    Distinct failure modes: MalformedHeaderError (bad magic or topology),
    VersionMismatchError, TruncatedPayloadError (size disagreement),
    FingerprintMismatchError (stored hash does not match content).  The
    loaded Psi/Gamma are re-checked for orthogonality since the inverse
    transform is implemented as the transpose.
    """
    data = Path(source).read_bytes()
    if len(data) < 4 or data[:4] != BASIS_MAGIC:
        raise MalformedHeaderError("not a basis file (bad magic)")
    if len(data) < 4 + _HEADER.size:
        raise TruncatedPayloadError("basis file header is incomplete")
    version, n, k, topology = _HEADER.unpack_from(data, 4)
    if version != BASIS_VERSION:
        raise VersionMismatchError(
            f"basis file version {version} unsupported (expected {BASIS_VERSION})"
        )
    if topology != TOPOLOGY_CYCLIC_FORWARD:
        raise MalformedHeaderError(f"unknown topology id {topology}")
    if n < 2 or not (1 <= k < n):
        raise MalformedHeaderError(f"basis file header has invalid n={n}, k={k}")

    offset = 4 + _HEADER.size
    payload = 8 * (n * n + n + n * n)
    expected = offset + payload + 32
    if len(data) != expected:
        raise TruncatedPayloadError(
            f"basis file is {len(data)} bytes, expected {expected}"
        )
    stored = data[-32:]
    if hashlib.sha256(data[:-32]).digest() != stored:
        raise FingerprintMismatchError("basis file content hash does not match")

    psi = np.frombuffer(data, dtype="<f8", count=n * n, offset=offset).reshape(n, n)
    offset += 8 * n * n
    sigma = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
    offset += 8 * n
    gamma = np.frombuffer(data, dtype="<f8", count=n * n, offset=offset).reshape(n, n)

    psi = np.ascontiguousarray(psi)
    sigma = np.ascontiguousarray(sigma)
    gamma = np.ascontiguousarray(gamma)

    eye = np.eye(n)
    if np.max(np.abs(psi.T @ psi - eye)) > ORTHOGONALITY_TOL:
        raise DecompositionError("loaded basis is not orthogonal")
    if np.max(np.abs(gamma.T @ gamma - eye)) > ORTHOGONALITY_TOL:
        raise DecompositionError("loaded basis is not orthogonal")

    return GraphBasis(
        n=n,
        k=k,
        psi=psi,
        sigma=sigma,
        gamma=gamma,
        fingerprint=basis_fingerprint(n, k, psi),
    )
