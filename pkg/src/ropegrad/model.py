"""Problem instances, RoPE weight families and the exact forward pass.

Indices are 0-based throughout. Row ``j0`` of the attention matrix belongs to
query position ``j0``; the relative-position weight between query ``j0`` and
key ``i`` is ``W_{j0 - i}``. Lag ``t`` lives at row ``t + n - 1`` of every
per-lag table.
"""

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, GuardError, InstanceBoundError, InstanceError, ShapeError
from .tensor import rowwise_kron

MODES = ("identity", "rotary", "general")

# |supp| may be at most SUPPORT_FACTOR * d entries (rotary needs exactly 2d).
SUPPORT_FACTOR = 2
# Keeps every logit far from exp overflow: c_S * B**2 must not exceed this.
MAX_LOGIT_BOUND = 40.0
EXP_OVERFLOW = 700.0
MATERIALIZE_LIMIT = 2**26


def lag_index(n):
    """``n x n`` integer array holding ``j0 - i + n - 1``."""
    r = np.arange(n)
    return r[:, None] - r[None, :] + (n - 1)


class RopeWeights:
    """The family ``{W_t : t = -(n-1) .. n-1}`` of ``d x d`` position matrices.

    ``rotary`` uses d/2 adjacent 2x2 blocks ``R(t * theta_b)`` with
    ``theta_b = base ** (-2b/d)``; ``general`` stores an explicit table of
    shape ``(2n-1, d, d)``.
    """

    def __init__(self, mode, n, d, base=None, table=None):
        if mode not in MODES:
            raise ConfigError(f"unknown weight mode {mode!r}")
        if n < 1 or d < 1:
            raise ConfigError("n and d must be positive")
        self.mode = mode
        self.n = int(n)
        self.d = int(d)
        self.base = None
        self.table = None
        if mode == "rotary":
            if d % 2:
                raise ConfigError(f"rotary weights need even d, got {d}")
            if base is None or not base > 0:
                raise ConfigError("rotary weights need a positive base")
            self.base = float(base)
        elif mode == "general":
            table = np.asarray(table, dtype=np.float64)
            if table.shape != (2 * n - 1, d, d):
                raise ShapeError(
                    f"general weight table must have shape {(2 * n - 1, d, d)}, got {table.shape}"
                )
            if not np.all(np.isfinite(table)):
                raise InstanceError("weight table has non-finite entries")
            if np.abs(table).max(initial=0.0) > 1.0:
                raise InstanceError("weight table violates |W_t| <= 1")
            if np.count_nonzero(self._support_of(table)) > SUPPORT_FACTOR * d:
                raise InstanceError(
                    f"weight support has more than {SUPPORT_FACTOR}*d = {SUPPORT_FACTOR * d} entries"
                )
            self.table = table

    @staticmethod
    def _support_of(table):
        return np.any(table != 0.0, axis=0)

    @property
    def thetas(self):
        d = self.d
        return self.base ** (-2.0 * np.arange(d // 2) / d)

    def matrix(self, t):
        """Dense ``W_t``."""
        n, d = self.n, self.d
        if not -(n - 1) <= t <= n - 1:
            raise IndexError(f"lag {t} outside [-(n-1), n-1] for n={n}")
        if self.mode == "identity":
            return np.eye(d)
        if self.mode == "general":
            return self.table[t + n - 1].copy()
        w = np.zeros((d, d))
        for b, th in enumerate(self.thetas):
            c, s = np.cos(t * th), np.sin(t * th)
            w[2 * b : 2 * b + 2, 2 * b : 2 * b + 2] = [[c, -s], [s, c]]
        return w

    def dense_table(self):
        """All ``W_t`` stacked, shape ``(2n-1, d, d)``."""
        if self.mode == "general":
            return self.table.copy()
        n, d = self.n, self.d
        if self.mode == "identity":
            return np.broadcast_to(np.eye(d), (2 * n - 1, d, d)).copy()
        lags = np.arange(-(n - 1), n)
        out = np.zeros((2 * n - 1, d, d))
        ang = lags[:, None] * self.thetas[None, :]
        c, s = np.cos(ang), np.sin(ang)
        for b in range(d // 2):
            out[:, 2 * b, 2 * b] = c[:, b]
            out[:, 2 * b, 2 * b + 1] = -s[:, b]
            out[:, 2 * b + 1, 2 * b] = s[:, b]
            out[:, 2 * b + 1, 2 * b + 1] = c[:, b]
        return out

    def vec_table(self):
        """Row-major ``vec(W_t)`` per lag, shape ``(2n-1, d*d)``."""
        return self.dense_table().reshape(2 * self.n - 1, self.d * self.d)

    def support(self):
        """Boolean ``d x d`` mask containing every ``supp(W_t)``."""
        d = self.d
        if self.mode == "identity":
            return np.eye(d, dtype=bool)
        if self.mode == "general":
            return self._support_of(self.table)
        mask = np.zeros((d, d), dtype=bool)
        for b in range(d // 2):
            mask[2 * b : 2 * b + 2, 2 * b : 2 * b + 2] = True
        return mask

    @property
    def density(self):
        """``c_S = max_t nnz(W_t) / d``."""
        if self.mode == "identity":
            return 1.0
        if self.mode == "rotary":
            return 2.0
        nnz = np.count_nonzero(self.table.reshape(2 * self.n - 1, -1), axis=1)
        return float(nnz.max(initial=0)) / self.d

    def to_json(self):
        out = {"mode": self.mode}
        if self.mode == "rotary":
            out["base"] = self.base
        elif self.mode == "general":
            entries = []
            for row, w in enumerate(self.table):
                nz = np.argwhere(w != 0.0)
                entries.append(
                    {
                        "t": row - (self.n - 1),
                        "entries": [[int(r), int(c), float(w[r, c])] for r, c in nz],
                    }
                )
            out["weights"] = entries
        return out


def make_identity_weights(n, d):
    return RopeWeights("identity", n, d)


def make_rotary_weights(n, d, base=10000.0):
    return RopeWeights("rotary", n, d, base=base)


def make_general_weights(n, d, table):
    return RopeWeights("general", n, d, table=table)


@dataclass(frozen=True, eq=False)
class Instance:
    """All inputs of one gradient problem. Validated on construction."""

    A1: np.ndarray
    A2: np.ndarray
    A3: np.ndarray
    X1: np.ndarray
    X2: np.ndarray
    Y: np.ndarray
    E: np.ndarray
    B: float
    weights: RopeWeights

    def __post_init__(self):
        for name in ("A1", "A2", "A3", "X1", "X2", "Y", "E"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        object.__setattr__(self, "B", float(self.B))
        self.validate()

    @property
    def n(self):
        return self.A1.shape[0]

    @property
    def d(self):
        return self.A1.shape[1] if self.A1.ndim == 2 else 0

    def validate(self):
        """Raise :class:`InstanceError` naming the first violated invariant."""
        if self.A1.ndim != 2:
            raise InstanceError("A1 must be a 2-D matrix")
        n, d = self.A1.shape
        if n < 1 or d < 1:
            raise InstanceError("n and d must be positive")
        shapes = {"A1": (n, d), "A2": (n, d), "A3": (n, d), "E": (n, d),
                  "X1": (d, d), "X2": (d, d), "Y": (d, d)}
        for name, shape in shapes.items():
            a = getattr(self, name)
            if a.shape != shape:
                raise InstanceError(f"{name} has shape {a.shape}, expected {shape}")
            if not np.all(np.isfinite(a)):
                raise InstanceError(f"{name} has non-finite entries")
        if not self.B > 0:
            raise InstanceError("B must be positive")
        w = self.weights
        if w.n != n or w.d != d:
            raise InstanceError(f"weights are for n={w.n}, d={w.d}; instance has n={n}, d={d}")
        slack = self.B * (1 + 1e-12)
        for label, a, x in (("A1@X1", self.A1, self.X1), ("A2@X2", self.A2, self.X2),
                            ("A3@Y", self.A3, self.Y)):
            norm = float(np.abs(a @ x).max())
            if norm > slack:
                raise InstanceError(f"||{label}||_inf = {norm:.6g} exceeds B = {self.B:.6g}")
        if w.density * self.B**2 > MAX_LOGIT_BOUND:
            raise InstanceBoundError(
                f"logit bound c_S*B^2 = {w.density * self.B**2:.4g} exceeds {MAX_LOGIT_BOUND}; "
                "use a smaller B"
            )

    def replace(self, **changes):
        return replace(self, **changes)

    @property
    def queries(self):
        return self.A1 @ self.X1

    @property
    def keys(self):
        return self.A2 @ self.X2

    @property
    def values(self):
        return self.A3 @ self.Y

    @property
    def logit_bound(self):
        """``L_max = c_S * B**2``, a bound on every ``|logit|``."""
        return self.weights.density * self.B**2

    def big_x(self):
        """``X1 ⊗ X2`` as a ``d^2 x d^2`` matrix."""
        from .tensor import kron

        return kron(self.X1, self.X2)


@dataclass(frozen=True, eq=False)
class ForwardState:
    A: np.ndarray
    Dvec: np.ndarray
    S: np.ndarray
    Vy: np.ndarray
    C: np.ndarray
    loss: float


def logit(inst, j0, i):
    """Exponent ``Q[j0] @ W_{j0-i} @ K[i] / d`` of one attention entry."""
    n = inst.n
    if not (0 <= j0 < n and 0 <= i < n):
        raise IndexError(f"({j0}, {i}) outside [0, {n})")
    q = inst.A1[j0] @ inst.X1
    k = inst.A2[i] @ inst.X2
    return float(q @ inst.weights.matrix(j0 - i) @ k) / inst.d


def logit_matrix(inst):
    """All ``n x n`` logits, exploiting the weight structure."""
    q, k = inst.queries, inst.keys
    n, d = inst.n, inst.d
    w = inst.weights
    if w.mode == "identity":
        return (q @ k.T) / d
    lag = np.arange(n)[:, None] - np.arange(n)[None, :]
    out = np.zeros((n, n))
    if w.mode == "rotary":
        for b, th in enumerate(w.thetas):
            q1, q2 = q[:, 2 * b], q[:, 2 * b + 1]
            k1, k2 = k[:, 2 * b], k[:, 2 * b + 1]
            ang = lag * th
            out += np.cos(ang) * (np.outer(q1, k1) + np.outer(q2, k2))
            out += np.sin(ang) * (np.outer(q2, k1) - np.outer(q1, k2))
        return out / d
    table = w.table[lag + (n - 1)]
    for r, c in np.argwhere(w.support()):
        out += np.outer(q[:, r], k[:, c]) * table[:, :, r, c]
    return out / d


def logits_from_x(inst, big_x):
    """Logits for an arbitrary ``d^2 x d^2`` parameter (not necessarily X1 ⊗ X2).

    Materializes ``n^2 d^2`` numbers; intended for finite-difference oracles.
    """
    n, d = inst.n, inst.d
    big_x = np.asarray(big_x, dtype=np.float64)
    if big_x.shape != (d * d, d * d):
        raise ShapeError(f"X must be {d * d}x{d * d}, got {big_x.shape}")
    if n * n * d * d > MATERIALIZE_LIMIT:
        raise GuardError("logits_from_x is limited to small instances")
    m = (inst.weights.vec_table() @ big_x.T).reshape(2 * n - 1, d, d)
    m = m[lag_index(n)]
    return np.einsum("ja,jiac,ic->ji", inst.A1, m, inst.A2) / d


def _finish(inst, logits):
    top = float(np.abs(logits).max())
    if top > EXP_OVERFLOW:
        raise InstanceBoundError(f"logit magnitude {top:.4g} would overflow exp; use a smaller B")
    a = np.exp(logits)
    dvec = a.sum(axis=1)
    s = a / dvec[:, None]
    vy = inst.values
    c = s @ vy - inst.E
    loss = 0.5 * float(np.sum(c * c))
    return ForwardState(A=a, Dvec=dvec, S=s, Vy=vy, C=c, loss=loss)


def forward(inst):
    """Attention numerator, normalization, residual and loss."""
    return _finish(inst, logit_matrix(inst))


def forward_from_x(inst, big_x):
    return _finish(inst, logits_from_x(inst, big_x))


def loss_double_sum(state):
    """``sum_{j0, i0} 0.5 * c[j0, i0]**2`` by explicit loops."""
    total = 0.0
    n, d = state.C.shape
    for j0 in range(n):
        for i0 in range(d):
            total += 0.5 * state.C[j0, i0] ** 2
    return total


def self_consistent(inst):
    """Copy of ``inst`` whose target equals the model output, so the loss is 0."""
    st = forward(inst)
    return inst.replace(E=st.S @ st.Vy)


def build_tilde_A_block(inst, j0):
    """Rows of the ``n x d^4`` block for query ``j0``.

    Row ``i`` is ``(A1[j0] ⊗ A2[i] ⊗ vec(W_{j0-i})) / d`` so that
    ``exp(block @ vec(X1 ⊗ X2))`` is row ``j0`` of the attention numerator.
    """
    n, d = inst.n, inst.d
    if n * n * d**4 > MATERIALIZE_LIMIT:
        raise GuardError(f"tilde-A block too large to materialize (n={n}, d={d})")
    if not 0 <= j0 < n:
        raise IndexError(f"j0={j0} outside [0, {n})")
    left = np.broadcast_to(inst.A1[j0], (n, d))
    wv = inst.weights.vec_table()[j0 - np.arange(n) + (n - 1)]
    return rowwise_kron(rowwise_kron(left, inst.A2), wv) / d


# Component functions of the entrywise loss, evaluated at an arbitrary x.

def u_of(block, x):
    return np.exp(block @ x)


def alpha_of(block, x):
    return float(np.sum(u_of(block, x)))


def s_of(block, x):
    u = u_of(block, x)
    return u / np.sum(u)


def v_of(inst, i0):
    return inst.A3 @ inst.Y[:, i0]


def c_of(inst, block, x, j0, i0):
    return float(s_of(block, x) @ v_of(inst, i0)) - inst.E[j0, i0]


def loss_entry(inst, block, x, j0, i0):
    return 0.5 * c_of(inst, block, x, j0, i0) ** 2


# JSON instance files.

_MATRICES = ("A1", "A2", "A3", "X1", "X2", "Y", "E")


def instance_to_dict(inst):
    out = {"n": inst.n, "d": inst.d, "B": inst.B}
    w = inst.weights.to_json()
    out["mode"] = w.pop("mode")
    out.update(w)
    for name in _MATRICES:
        out[name] = getattr(inst, name).tolist()
    return out


def instance_from_dict(doc):
    """Build and validate an :class:`Instance` from a decoded JSON document."""
    try:
        n = int(doc["n"])
        d = int(doc["d"])
        mode = doc.get("mode", "identity")
        arrays = {}
        for name in _MATRICES:
            arrays[name] = np.asarray(doc[name], dtype=np.float64)
        bound = float(doc["B"])
    except KeyError as exc:
        raise InstanceError(f"instance document is missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"malformed instance document: {exc}") from None
    if mode == "rotary":
        weights = RopeWeights("rotary", n, d, base=float(doc.get("base", 10000.0)))
    elif mode == "general":
        table = np.zeros((2 * n - 1, d, d))
        for item in doc.get("weights", []):
            t = int(item["t"])
            if not -(n - 1) <= t <= n - 1:
                raise InstanceError(f"weight lag {t} outside [-(n-1), n-1]")
            for r, c, val in item.get("entries", []):
                table[t + n - 1, int(r), int(c)] = float(val)
        weights = RopeWeights("general", n, d, table=table)
    else:
        weights = RopeWeights(mode, n, d)
    inst = Instance(B=bound, weights=weights, **arrays)
    if inst.n != n or inst.d != d:
        raise InstanceError(f"declared n={n}, d={d} disagree with matrix shapes")
    return inst


def load_instance(path):
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def save_instance(inst, path):
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh)
