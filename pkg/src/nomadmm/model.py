"""System model for codebook-based grant-free uplink NOMA.

Users are indexed from 0 throughout. A joint codeword vector ``x`` has
length ``J*K``; block ``j`` is ``x[j*K:(j+1)*K]``.  The assembled channel
stacks one ``K x JK`` row of diagonal blocks per receive antenna.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ._validation import check_rng, check_vector

__all__ = [
    "ACTIVITY_MODES",
    "Codebook",
    "SystemConfig",
    "ChannelRealization",
    "TransmitFrame",
    "assemble_channel_matrix",
    "draw_channel",
    "encode_slot",
    "observe",
    "perturb_channel",
    "generate_frame",
    "structural_mask",
    "load_codebook",
    "save_codebook",
    "example_codebook",
    "make_scma_codebook",
    "make_dcma_codebook",
    "noise_variance",
]

ACTIVITY_MODES = ("static", "dynamic-case1", "dynamic-case2a", "dynamic-case2b")


@dataclass(frozen=True)
class Codebook:
    """Per-user codebooks; ``words`` has shape ``(J, M, K)``.

    Each user's codewords are scaled to unit average energy on
    construction.  The all-zero "inactive" codeword is implicit.
    """

    words: np.ndarray
    kind: str

    def __post_init__(self):
        words = np.array(self.words, dtype=complex)
        if words.ndim != 3:
            raise ValueError(f"codebook words must have shape (J, M, K), got {words.shape}")
        J, M, K = words.shape
        if M < 2 or M & (M - 1):
            raise ValueError(f"M must be a power of two >= 2, got {M}")
        if self.kind not in ("sparse", "dense"):
            raise ValueError(f"kind must be 'sparse' or 'dense', got {self.kind!r}")
        energy = np.mean(np.sum(np.abs(words) ** 2, axis=2), axis=1)
        if np.any(energy <= 0):
            raise ValueError("every user needs at least one nonzero codeword")
        words = words / np.sqrt(energy)[:, None, None]
        nonzero = np.abs(words) > 1e-12
        if self.kind == "dense":
            if not nonzero.all():
                raise ValueError("dense codewords must have all K entries nonzero")
        else:
            for j in range(J):
                pattern = nonzero[j, 0]
                if not (nonzero[j] == pattern).all():
                    raise ValueError(f"user {j}: sparse codewords must share one support")
                if pattern.sum() >= K:
                    raise ValueError(f"user {j}: sparse support must be smaller than K")
        words.setflags(write=False)
        object.__setattr__(self, "words", words)

    @property
    def J(self) -> int:
        return self.words.shape[0]

    @property
    def M(self) -> int:
        return self.words.shape[1]

    @property
    def K(self) -> int:
        return self.words.shape[2]

    @property
    def d_v(self) -> int:
        """Nonzero entries per codeword (``K`` for dense codebooks)."""
        return int(np.max(np.sum(np.abs(self.words[:, 0]) > 1e-12, axis=1)))

    @property
    def bits_per_symbol(self) -> int:
        return int(np.log2(self.M))

    def min_distance(self, user: int) -> float:
        """Smallest Euclidean distance between two codewords of ``user``."""
        w = self.words[user]
        return min(np.linalg.norm(a - b) for a, b in itertools.combinations(w, 2))


@dataclass(frozen=True)
class SystemConfig:
    J: int = 8
    K: int = 4
    N_r: int = 2
    L: int = 1
    S_l: int = 2
    snr_db: float = 10.0
    seed: int = 0
    activity_mode: str = "static"
    p_stay: float = 0.8
    redraw_channel: bool = False

    def __post_init__(self):
        if self.J < 1 or self.K < 1:
            raise ValueError("J and K must be positive")
        if self.K > self.J:
            raise ValueError(f"K={self.K} > J={self.J}: the system must be overloaded (K <= J)")
        if self.N_r < 1:
            raise ValueError("N_r must be >= 1")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if not 0 <= self.S_l <= self.J:
            raise ValueError(f"S_l={self.S_l} must lie in [0, J={self.J}]")
        if self.activity_mode not in ACTIVITY_MODES:
            raise ValueError(f"unknown activity_mode {self.activity_mode!r}")
        if not 0.0 <= self.p_stay <= 1.0:
            raise ValueError("p_stay must lie in [0, 1]")

    @property
    def noise_var(self) -> float:
        return noise_variance(self.snr_db)


def noise_variance(snr_db: float) -> float:
    """Per-entry noise variance for unit-energy codewords and unit-gain fading."""
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    return float(10.0 ** (-snr_db / 10.0))


@dataclass(frozen=True)
class ChannelRealization:
    """Fading coefficients ``h[j, n_r, k]``."""

    h: np.ndarray

    def __post_init__(self):
        h = np.array(self.h, dtype=complex)
        if h.ndim != 3:
            raise ValueError(f"h must have shape (J, N_r, K), got {h.shape}")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.h.shape


@dataclass(frozen=True)
class TransmitFrame:
    """Ground truth for one frame of ``L`` slots."""

    supports: tuple[frozenset, ...]
    symbols: tuple[dict, ...]
    x_slots: np.ndarray = field(repr=False)

    @property
    def L(self) -> int:
        return len(self.supports)


def draw_channel(J: int, N_r: int, K: int, rng) -> ChannelRealization:
    """I.i.d. CN(0, 1) Rayleigh fading for every user, antenna and RE."""
    rng = check_rng(rng)
    shape = (J, N_r, K)
    h = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    return ChannelRealization(h)


def assemble_channel_matrix(ch, J=None, N_r=None, K=None) -> np.ndarray:
    """Stack ``diag(h[j, n_r])`` into the ``N_r*K x J*K`` measurement matrix.

    Parameters
    ----------
    ch : ChannelRealization or array of shape (J, N_r, K)
    J, N_r, K : int, optional
        Expected dimensions; a mismatch raises ``ValueError``.
    """
    h = ch.h if isinstance(ch, ChannelRealization) else np.asarray(ch, dtype=complex)
    if h.ndim != 3:
        raise ValueError(f"channel must have shape (J, N_r, K), got {h.shape}")
    for name, want, got in zip(("J", "N_r", "K"), (J, N_r, K), h.shape):
        if want is not None and want != got:
            raise ValueError(f"channel {name}={got} does not match expected {want}")
    Jh, Nr, Kh = h.shape
    H = np.zeros((Nr, Kh, Jh, Kh), dtype=complex)
    idx = np.arange(Kh)
    # H[n, k, j, k] = h[j, n, k]
    H[:, idx, :, idx] = np.transpose(h, (2, 1, 0))
    return H.reshape(Nr * Kh, Jh * Kh)


def structural_mask(J: int, N_r: int, K: int) -> np.ndarray:
    """Boolean mask of the entries of an assembled channel that may be nonzero."""
    return assemble_channel_matrix(np.ones((J, N_r, K))) != 0


def encode_slot(support, symbols, cb: Codebook) -> np.ndarray:
    """Joint codeword vector for one slot.

    ``symbols`` maps each user in ``support`` to a codeword index.
    """
    support = set(int(j) for j in support)
    if set(symbols) != support:
        raise ValueError("symbols must be defined exactly on the support")
    x = np.zeros(cb.J * cb.K, dtype=complex)
    for j in support:
        if not 0 <= j < cb.J:
            raise ValueError(f"user {j} outside 0..{cb.J - 1}")
        m = int(symbols[j])
        if not 0 <= m < cb.M:
            raise ValueError(f"symbol index {m} for user {j} outside 0..{cb.M - 1}")
        x[j * cb.K:(j + 1) * cb.K] = cb.words[j, m]
    return x


def observe(H, x, noise_var: float, rng) -> np.ndarray:
    """Return ``H @ x + w`` with ``w ~ CN(0, noise_var I)``."""
    H = np.asarray(H)
    x = check_vector(x, H.shape[-1], "x")
    if noise_var < 0:
        raise ValueError(f"noise variance must be nonnegative, got {noise_var}")
    r = H @ x
    if noise_var == 0:
        return r
    rng = check_rng(rng)
    w = rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape)
    return r + np.sqrt(noise_var / 2.0) * w


def perturb_channel(H, delta: float, rng, K: int | None = None) -> np.ndarray:
    """Channel estimate ``H + delta * Omega``.

    ``Omega`` is i.i.d. CN(0, 1) on the structural nonzeros of ``H`` only,
    so the estimate keeps the diagonal-block layout.  With ``K`` given the
    structure is the rule ``row % K == col % K``; otherwise it is taken to
    be the nonzero pattern of ``H`` (which coincides almost surely).
    """
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    H = np.asarray(H, dtype=complex)
    if delta == 0:
        return H.copy()
    rng = check_rng(rng)
    if K is None:
        mask = H != 0
    else:
        rows, cols = H.shape[-2:]
        mask = (np.arange(rows)[:, None] % K) == (np.arange(cols)[None, :] % K)
    omega = rng.standard_normal(H.shape) + 1j * rng.standard_normal(H.shape)
    return H + delta * np.sqrt(0.5) * omega * mask


def _next_support(prev: frozenset, J: int, S: int, p_stay: float, rng) -> frozenset:
    stay = [j for j in sorted(prev) if rng.random() < p_stay]
    pool = np.array(sorted(set(range(J)) - prev), dtype=int)
    need = S - len(stay)
    if need > len(pool):
        # not enough never-active users; fall back to any inactive user
        pool = np.array(sorted(set(range(J)) - set(stay)), dtype=int)
    new = rng.choice(pool, size=need, replace=False) if need else []
    return frozenset(stay) | frozenset(int(j) for j in new)


def generate_frame(cfg: SystemConfig, cb: Codebook, rng) -> TransmitFrame:
    """Draw supports and symbols for ``cfg.L`` slots.

    Activity modes: ``static`` keeps one support for the whole frame;
    ``dynamic-case1`` draws every slot independently; ``dynamic-case2a``
    lets each active user stay with probability ``p_stay`` (departures are
    replaced from the inactive pool) and draws fresh symbols;
    ``dynamic-case2b`` evolves the support the same way but a staying
    user repeats its previous symbol.
    """
    if cfg.S_l > cfg.J:
        raise ValueError("S_l exceeds J")
    if cb.J != cfg.J or cb.K != cfg.K:
        raise ValueError("codebook dimensions do not match the system configuration")
    rng = check_rng(rng)
    J, S, M = cfg.J, cfg.S_l, cb.M

    def fresh_support():
        return frozenset(int(j) for j in rng.choice(J, size=S, replace=False))

    supports, symbols = [], []
    for l in range(cfg.L):
        if l == 0 or cfg.activity_mode == "dynamic-case1":
            sup = fresh_support()
        elif cfg.activity_mode == "static":
            sup = supports[0]
        else:
            sup = _next_support(supports[-1], J, S, cfg.p_stay, rng)
        sym = {}
        for j in sorted(sup):
            if cfg.activity_mode == "dynamic-case2b" and l > 0 and j in symbols[-1]:
                sym[j] = symbols[-1][j]
            else:
                sym[j] = int(rng.integers(M))
        supports.append(sup)
        symbols.append(sym)
    x = np.stack([encode_slot(s, m, cb) for s, m in zip(supports, symbols)])
    x.setflags(write=False)
    return TransmitFrame(tuple(supports), tuple(symbols), x)


# -- codebooks ---------------------------------------------------------------

# QPSK index maps whose antipodal pairs are {02|13}, {01|23} and {03|12}.
_QPSK_MAPS = ((0, 1, 2, 3), (0, 2, 1, 3), (0, 1, 3, 2))


def _qpsk(idx):
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * np.asarray(idx)))


def _signature(J: int, K: int) -> np.ndarray:
    # deterministic user/RE phase rotations spreading users over the circle
    j = np.arange(J)[:, None]
    k = np.arange(K)[None, :]
    return 2 * np.pi * (((j * (2 * k + 1)) % (2 * J)) / (4.0 * J))


def make_dcma_codebook(J: int = 8, K: int = 4) -> Codebook:
    """Dense 4-point codebook: per-RE QPSK with rotating index maps.

    Every pair of codewords is antipodal on at least one RE, giving a
    squared minimum distance of 2.5 at unit energy when ``K >= 3``.
    """
    sig = _signature(J, K)
    words = np.empty((J, 4, K), dtype=complex)
    for m in range(4):
        idx = [_QPSK_MAPS[k % 3][m] for k in range(K)]
        words[:, m, :] = _qpsk(idx)[None, :] * np.exp(1j * sig)
    return Codebook(words / np.sqrt(K), "dense")


def make_scma_codebook(J: int = 8, K: int = 4) -> Codebook:
    """Sparse 4-point codebook with ``d_v = 2`` nonzeros per codeword.

    Users cycle through the RE pairs, complementary pairs adjacent, so for
    ``J=8, K=4`` every RE carries exactly 4 users.
    """
    pairs = list(itertools.combinations(range(K), 2))
    # order pairs so consecutive users complement each other where possible
    ordered = []
    for a, b in pairs:
        if (a, b) in ordered:
            continue
        ordered.append((a, b))
        rest = tuple(sorted(set(range(K)) - {a, b}))
        if len(rest) == 2 and rest in pairs and rest not in ordered:
            ordered.append(rest)
    sig = _signature(J, 2)
    words = np.zeros((J, 4, K), dtype=complex)
    for j in range(J):
        a, b = ordered[j % len(ordered)]
        for m in range(4):
            words[j, m, a] = _qpsk(_QPSK_MAPS[0][m]) * np.exp(1j * sig[j, 0])
            words[j, m, b] = _qpsk(_QPSK_MAPS[1][m]) * np.exp(1j * sig[j, 1])
    return Codebook(words / np.sqrt(2.0), "sparse")


def _format_complex(v: complex) -> str:
    return f"{v.real:.17g}:{v.imag:.17g}"


def save_codebook(cb: Codebook, path) -> None:
    """Write ``cb`` in the plain-text ``J K M kind`` format."""
    lines = [f"{cb.J} {cb.K} {cb.M} {cb.kind}"]
    for j in range(cb.J):
        for m in range(cb.M):
            lines.append(" ".join(_format_complex(v) for v in cb.words[j, m]))
    Path(path).write_text("\n".join(lines) + "\n")


def parse_codebook(text: str) -> Codebook:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 4:
        raise ValueError("codebook header must read 'J K M kind'")
    J, K, M = (int(v) for v in rows[0][:3])
    kind = rows[0][3]
    body = rows[1:]
    if len(body) != J * M:
        raise ValueError(f"expected {J * M} codeword lines, found {len(body)}")
    words = np.empty((J, M, K), dtype=complex)
    for i, row in enumerate(body):
        if len(row) != K:
            raise ValueError(f"codeword line {i + 2} has {len(row)} entries, expected {K}")
        for k, item in enumerate(row):
            re, _, im = item.partition(":")
            words[i // M, i % M, k] = complex(float(re), float(im or 0.0))
    return Codebook(words, kind)


def load_codebook(path) -> Codebook:
    return parse_codebook(Path(path).read_text())


def example_codebook(kind: str) -> Codebook:
    """Shipped 8-user, 4-RE, 4-point codebook (``'sparse'`` or ``'dense'``)."""
    names = {"sparse": "scma_j8_k4_m4.txt", "dense": "dcma_j8_k4_m4.txt",
             "scma": "scma_j8_k4_m4.txt", "dcma": "dcma_j8_k4_m4.txt"}
    if kind not in names:
        raise ValueError(f"no example codebook of kind {kind!r}")
    text = resources.files("nomadmm").joinpath("data", names[kind]).read_text()
    return parse_codebook(text)
