"""Absorbing Markov chain analysis.

Two computation paths are provided for every quantity:

* ``"reference"`` inverts ``I - Q`` by Gauss-Jordan elimination and builds the
  absorption-conditioned chains explicitly, exactly as the textbook procedure
  reads.
* ``"fast"`` never forms the inverse.  It solves ``(I - Q) F = R`` and
  ``(I - Q)^T mu = e_start`` with LAPACK and obtains conditioned rewards from
  the unconditioned visit counts through the identity
  ``mu^(a)_{s,i} = mu_{s,i} f_{i,a} / f_{s,a}``.

The two paths are tested against each other.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Sequence

import numpy as np
import scipy.linalg

from .linalg import SingularMatrixError, gauss_jordan_inverse

ROW_TOL = 1e-12
CONDITION_EPS = 1e-12
CHAIN_SCHEMA = "cda-forge/absorbing-chain"
CHAIN_SCHEMA_VERSION = 1


class ChainValidationError(ValueError):
    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class UnreachableTargetError(ValueError):
    pass


def _identity(x):
    return x


@dataclass(frozen=True, eq=False)
class AbsorbingChain:
    """A finite chain with identified absorbing states and one start state.

    ``success`` and ``failure`` optionally designate two absorbing states for
    expected-utility evaluation.
    """

    states: tuple
    absorbing: tuple
    transitions: np.ndarray
    start: int
    success: Hashable | None = None
    failure: Hashable | None = None
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        states = tuple(self.states)
        absorbing_set = set(self.absorbing)
        # absorbing states kept in the insertion order of ``states``
        absorbing = tuple(s for s in states if s in absorbing_set)
        P = np.array(self.transitions, dtype=float)
        P.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "absorbing", absorbing)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(states)})
        object.__setattr__(self, "_cache", {})
        if self.check:
            validate_chain(self)

    @property
    def n(self):
        return len(self.states)

    @property
    def transient(self):
        absorbing = set(self.absorbing)
        return tuple(s for s in self.states if s not in absorbing)

    @property
    def start_state(self):
        return self.states[self.start]

    def index(self, state):
        try:
            return self._index[state]
        except KeyError:
            raise KeyError(f"unknown state {state!r}") from None

    def to_json(self) -> str:
        return json.dumps(chain_to_dict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AbsorbingChain":
        return chain_from_dict(json.loads(text))


def validate_chain(chain: AbsorbingChain) -> None:
    P = chain.transitions
    n = len(chain.states)
    if len(set(chain.states)) != n:
        raise ChainValidationError("duplicate state identifiers")
    if P.shape != (n, n):
        raise ChainValidationError(f"transition matrix shape {P.shape} does not match {n} states")
    if not (0 <= chain.start < n):
        raise ChainValidationError(f"start index {chain.start} out of range")
    if not np.all(np.isfinite(P)):
        raise ChainValidationError("transition matrix has non-finite entries")
    for i, s in enumerate(chain.states):
        row = P[i]
        if row.min() < -ROW_TOL:
            raise ChainValidationError(f"negative transition probability out of state {s!r}", s)
        if abs(row.sum() - 1.0) > ROW_TOL:
            raise ChainValidationError(
                f"row of state {s!r} sums to {row.sum():.15g}, not 1", s)
    absorbing_idx = [chain.index(s) for s in chain.absorbing]
    for i in absorbing_idx:
        row = P[i]
        off = np.delete(row, i)
        if abs(row[i] - 1.0) > ROW_TOL or (off.size and np.abs(off).max() > ROW_TOL):
            raise ChainValidationError(
                f"absorbing state {chain.states[i]!r} must have P_ii = 1", chain.states[i])
    for label in (chain.success, chain.failure):
        if label is not None and label not in set(chain.absorbing):
            raise ChainValidationError(f"designated state {label!r} is not absorbing", label)
    stuck = cannot_absorb(P, absorbing_idx)
    if stuck:
        s = chain.states[stuck[0]]
        raise ChainValidationError(f"no absorbing state is reachable from state {s!r}", s)


def cannot_absorb(P, absorbing_idx) -> list[int]:
    """Indices of states from which no absorbing state is reachable."""
    n = P.shape[0]
    preds = [[] for _ in range(n)]
    rows, cols = np.nonzero(P > 0)
    for i, j in zip(rows.tolist(), cols.tolist()):
        if i != j:
            preds[j].append(i)
    seen = np.zeros(n, dtype=bool)
    queue = deque(absorbing_idx)
    seen[list(absorbing_idx)] = True
    while queue:
        j = queue.popleft()
        for i in preds[j]:
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return [int(i) for i in np.flatnonzero(~seen)]


def chain_to_dict(chain: AbsorbingChain) -> dict:
    return {
        "schema": CHAIN_SCHEMA,
        "version": CHAIN_SCHEMA_VERSION,
        "states": [_jsonable(s) for s in chain.states],
        "absorbing": [_jsonable(s) for s in chain.absorbing],
        "transitions": [[float(x) for x in row] for row in chain.transitions],
        "start": int(chain.start),
        "success": _jsonable(chain.success),
        "failure": _jsonable(chain.failure),
    }


def chain_from_dict(d: dict) -> AbsorbingChain:
    if d.get("schema") != CHAIN_SCHEMA:
        raise ChainValidationError(f"unexpected schema {d.get('schema')!r}")
    if d.get("version") != CHAIN_SCHEMA_VERSION:
        raise ChainValidationError(f"unsupported chain schema version {d.get('version')!r}")
    return AbsorbingChain(
        states=tuple(_hashable(s) for s in d["states"]),
        absorbing=tuple(_hashable(s) for s in d["absorbing"]),
        transitions=np.array(d["transitions"], dtype=float),
        start=int(d["start"]),
        success=_hashable(d.get("success")),
        failure=_hashable(d.get("failure")),
    )


def _jsonable(s):
    if s is None or isinstance(s, (str, int, float)):
        return s
    if isinstance(s, tuple):
        return [_jsonable(x) for x in s]
    return str(s)


def _hashable(s):
    if isinstance(s, list):
        return tuple(_hashable(x) for x in s)
    return s


@dataclass(frozen=True)
class CanonicalForm:
    Q: np.ndarray
    R: np.ndarray
    transient: tuple  # chain indices, row order of Q and R
    absorbing: tuple  # chain indices, column order of R

    @property
    def transient_pos(self):
        return {idx: k for k, idx in enumerate(self.transient)}

    @property
    def absorbing_pos(self):
        return {idx: k for k, idx in enumerate(self.absorbing)}


def canonical_partition(chain: AbsorbingChain) -> CanonicalForm:
    cached = chain._cache.get("canonical")
    if cached is not None:
        return cached
    absorbing = tuple(chain.index(s) for s in chain.absorbing)
    absorbing_set = set(absorbing)
    transient = tuple(i for i in range(chain.n) if i not in absorbing_set)
    P = chain.transitions
    Q = P[np.ix_(transient, transient)]
    R = P[np.ix_(transient, absorbing)]
    cf = CanonicalForm(Q=Q, R=R, transient=transient, absorbing=absorbing)
    chain._cache["canonical"] = cf
    return cf


@dataclass(frozen=True)
class RewardSpec:
    """Per-transition rewards: a constant delay cost on every transition out of
    a transient state and zero on absorbing self-loops.

    ``free_states`` lists transient states whose outgoing transitions cost
    nothing (a dummy start state, for instance).  ``matrix`` overrides
    everything with explicit omega_ij values indexed like the chain.
    """

    per_transition_cost: float = 0.0
    matrix: np.ndarray | None = None
    free_states: tuple = ()

    def __post_init__(self):
        c = float(self.per_transition_cost)
        if not np.isfinite(c) or c < 0:
            raise ValueError(f"per-transition cost must be finite and >= 0, got {c}")

    def omega(self, chain: AbsorbingChain) -> np.ndarray:
        if self.matrix is not None:
            w = np.array(self.matrix, dtype=float)
            if w.shape != (chain.n, chain.n):
                raise ValueError(f"reward matrix shape {w.shape} != {(chain.n, chain.n)}")
            for s in chain.absorbing:
                i = chain.index(s)
                if w[i, i] != 0:
                    raise ValueError(f"absorbing self-loop reward of {s!r} must be 0")
            return w
        w = np.full((chain.n, chain.n), float(self.per_transition_cost))
        for s in chain.absorbing:
            w[chain.index(s)] = 0.0
        for s in self.free_states:
            if s in chain._index:
                w[chain.index(s)] = 0.0
        return w


class NonAbsorbingError(np.linalg.LinAlgError):
    def __init__(self, rows):
        if rows:
            msg = f"I - Q is singular; transient rows {rows} never leave the transient set"
        else:
            msg = "I - Q is numerically singular (absorption takes astronomically long)"
        super().__init__(msg)
        self.rows = rows


def fundamental_matrix(Q, method="reference") -> np.ndarray:
    """``M = (I - Q)^-1``: expected visits to transient j starting from i."""
    Q = np.asarray(Q, dtype=float)
    A = np.eye(Q.shape[0]) - Q
    try:
        if method == "reference":
            return gauss_jordan_inverse(A)
        if method == "fast":
            return scipy.linalg.solve(A, np.eye(Q.shape[0]))
    except (SingularMatrixError, np.linalg.LinAlgError):
        raise NonAbsorbingError(_closed_rows(Q)) from None
    raise ValueError(f"unknown method {method!r}")


def _closed_rows(Q):
    leak = 1.0 - Q.sum(axis=1)
    n = Q.shape[0]
    # rows that reach a leaking row escape; the rest form closed classes
    P = np.zeros((n + 1, n + 1))
    P[:n, :n] = Q
    P[:n, n] = np.maximum(leak, 0.0)
    P[n, n] = 1.0
    return cannot_absorb(P, [n])


def absorption_probabilities(chain: AbsorbingChain, method="reference") -> np.ndarray:
    """``F = M R``; rows follow ``canonical_partition(chain).transient``."""
    key = ("F", method)
    if key in chain._cache:
        return chain._cache[key]
    cf = canonical_partition(chain)
    if method == "reference":
        F = _reference_fundamental(chain) @ cf.R
    elif method == "fast":
        A = np.eye(len(cf.transient)) - cf.Q
        try:
            F = scipy.linalg.solve(A, cf.R)
        except np.linalg.LinAlgError:
            raise NonAbsorbingError(_closed_rows(cf.Q)) from None
    else:
        raise ValueError(f"unknown method {method!r}")
    F.setflags(write=False)
    chain._cache[key] = F
    return F


def _reference_fundamental(chain):
    M = chain._cache.get("M")
    if M is None:
        M = fundamental_matrix(canonical_partition(chain).Q, "reference")
        chain._cache["M"] = M
    return M


def _absorb_column(chain, F, cf, target):
    if target not in set(chain.absorbing):
        raise ValueError(f"{target!r} is not an absorbing state")
    return F[:, cf.absorbing_pos[chain.index(target)]]


def _start_row(chain, cf):
    pos = cf.transient_pos.get(chain.start)
    if pos is None:
        raise ValueError("start state is absorbing")
    return pos


def condition_on_absorbing(chain: AbsorbingChain, target, eps=CONDITION_EPS,
                           check=True) -> AbsorbingChain:
    """The chain restricted to paths that end in ``target``.

    Transient states whose absorption probability into ``target`` is at most
    ``eps`` are dropped; the rest are rescaled by ``f_j P_ij / f_i``.
    """
    cf = canonical_partition(chain)
    F = absorption_probabilities(chain, "reference")
    f = _absorb_column(chain, F, cf, target)
    s = _start_row(chain, cf)
    if f[s] <= eps:
        raise UnreachableTargetError(
            f"absorption target {target!r} is unreachable from the start state "
            f"(probability {f[s]:.3e})")
    keep = [k for k in range(len(cf.transient)) if f[k] > eps]
    t_idx = chain.index(target)
    P = chain.transitions
    keep_chain = [cf.transient[k] for k in keep]
    # state order: kept transient states and the target, in original insertion order
    order = sorted(keep_chain + [t_idx])
    pos = {idx: k for k, idx in enumerate(order)}
    newP = np.zeros((len(order), len(order)))
    for k in keep:
        i = cf.transient[k]
        fi = f[k]
        for kk in keep:
            j = cf.transient[kk]
            newP[pos[i], pos[j]] = f[kk] * P[i, j] / fi
        newP[pos[i], pos[t_idx]] = P[i, t_idx] / fi
        # absorb round-off so the row is stochastic to machine precision
        newP[pos[i]] /= newP[pos[i]].sum()
    newP[pos[t_idx], pos[t_idx]] = 1.0
    states = tuple(chain.states[i] for i in order)
    return AbsorbingChain(
        states=states,
        absorbing=(target,),
        transitions=newP,
        start=pos[chain.start],
        success=target if target == chain.success else None,
        failure=target if target == chain.failure else None,
        check=check,
    )


def accumulated_reward(chain: AbsorbingChain, target, rewards: RewardSpec,
                       method="reference") -> float:
    """Expected total reward collected before absorption, given absorption in ``target``."""
    omega = rewards.omega(chain)
    if method == "reference":
        cond = condition_on_absorbing(chain, target, check=False)
        ccf = canonical_partition(cond)
        M = fundamental_matrix(ccf.Q, "reference")
        mu = M[_start_row(cond, ccf)]
        old = [chain.index(s) for s in cond.states]
        w = omega[np.ix_(old, old)]
        per_state = (cond.transitions * w).sum(axis=1)
        return float(mu @ per_state[list(ccf.transient)])
    if method == "fast":
        cf = canonical_partition(chain)
        F = absorption_probabilities(chain, "fast")
        f = _absorb_column(chain, F, cf, target)
        s = _start_row(chain, cf)
        if f[s] <= CONDITION_EPS:
            raise UnreachableTargetError(
                f"absorption target {target!r} is unreachable from the start state")
        mu = _start_visits(cf, s)
        h = np.zeros(chain.n)
        h[list(cf.transient)] = f
        h[chain.index(target)] = 1.0
        P = chain.transitions
        T = list(cf.transient)
        v = (P[T] * omega[T]) @ h
        return float(mu @ v / f[s])
    raise ValueError(f"unknown method {method!r}")


def _start_visits(cf, s):
    A = np.eye(len(cf.transient)) - cf.Q
    e = np.zeros(len(cf.transient))
    e[s] = 1.0
    try:
        return scipy.linalg.solve(A.T, e)
    except np.linalg.LinAlgError:
        raise NonAbsorbingError(_closed_rows(cf.Q)) from None


@dataclass(frozen=True)
class AbsorptionReport:
    transient: tuple
    absorbing: tuple
    absorb_prob: np.ndarray
    fundamental: np.ndarray
    conditioned_visits: dict
    rewards: dict

    def probability(self, target):
        """Absorption probability into ``target`` from the start state."""
        return self._start_probs[target]


def analyze(chain: AbsorbingChain, rewards: RewardSpec | None = None,
            method="reference") -> AbsorptionReport:
    rewards = rewards or RewardSpec()
    cf = canonical_partition(chain)
    M = _reference_fundamental(chain) if method == "reference" else fundamental_matrix(cf.Q, "fast")
    F = absorption_probabilities(chain, method)
    s = _start_row(chain, cf)
    visits, tds = {}, {}
    for a_pos, a_idx in enumerate(cf.absorbing):
        target = chain.states[a_idx]
        if F[s, a_pos] <= CONDITION_EPS:
            continue
        tds[target] = accumulated_reward(chain, target, rewards, method)
        # mu^(a)_{s,i} = mu_{s,i} f_{i,a} / f_{s,a}
        visits[target] = M[s] * F[:, a_pos] / F[s, a_pos]
    report = AbsorptionReport(
        transient=tuple(chain.states[i] for i in cf.transient),
        absorbing=tuple(chain.states[i] for i in cf.absorbing),
        absorb_prob=F,
        fundamental=M,
        conditioned_visits=visits,
        rewards=tds,
    )
    object.__setattr__(report, "_start_probs",
                       {chain.states[a]: float(F[s, k]) for k, a in enumerate(cf.absorbing)})
    return report


def expected_utility(chain: AbsorbingChain, payoff_success: float,
                     payoff_failure_base: float = 0.0,
                     rewards: RewardSpec | None = None,
                     utility: Callable[[float], float] | None = None,
                     method="reference") -> float:
    """``P_S U(payoff_S - TD_S) + P_F U(payoff_F_base - TD_F)``.

    Outcomes reached with probability zero contribute nothing.
    """
    if chain.success is None or chain.failure is None:
        raise ChainValidationError("chain must designate both a Success and a Failure state")
    rewards = rewards or RewardSpec()
    U = utility or _identity
    cf = canonical_partition(chain)
    F = absorption_probabilities(chain, method)
    s = _start_row(chain, cf)
    total = 0.0
    for label, base in ((chain.success, payoff_success), (chain.failure, payoff_failure_base)):
        p = F[s, cf.absorbing_pos[chain.index(label)]]
        if p <= CONDITION_EPS:
            continue
        td = accumulated_reward(chain, label, rewards, method)
        total += p * U(base - td)
    return float(total)


def batch_start_outcomes(Q: np.ndarray, R: np.ndarray, start: int, step_cost: Sequence[float]):
    """Start-state absorption probabilities and conditioned delay rewards for a
    stack of chains sharing one state layout.

    ``Q`` has shape (B, n, n) and ``R`` shape (B, n, m).  The reward of every
    transition out of transient state i is ``step_cost[i]``.  Returns
    ``(prob, td)``, both (B, m); ``td`` is NaN where the probability is zero.
    """
    B, n, _ = Q.shape
    A = np.eye(n)[None, :, :] - Q
    F = np.linalg.solve(A, R)
    e = np.zeros((B, n, 1))
    e[:, start, 0] = 1.0
    mu = np.linalg.solve(np.swapaxes(A, 1, 2), e)[:, :, 0]
    cost = np.asarray(step_cost, dtype=float)
    prob = F[:, start, :]
    weighted = np.einsum("bi,i,bim->bm", mu, cost, F)
    with np.errstate(divide="ignore", invalid="ignore"):
        td = np.where(prob > CONDITION_EPS, weighted / prob, np.nan)
    return prob, td
