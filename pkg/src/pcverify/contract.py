"""Learning perception contracts from labelled samples.

A contract maps a state ``x`` to a box over the observation space: for
each observed dim ``j`` the interval ``M_c,j(x) +/- M_r,j(x)``. The center
is a least-squares fit and the radius a quantile regression of the
absolute center residuals, solved exactly as a linear program.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.optimize import linprog

from .envgrid import EnvGrid
from .errors import DimensionMismatch, InvalidParam, SingularDesign, SolverFailure
from .geometry import HyperRect, Interval, affine_image, sqr

__all__ = [
    "Calibration",
    "PerceptionContract",
    "SampleSet",
    "SamplerSpec",
    "contract_output_set",
    "empirical_conformance",
    "epsilon_for_samples",
    "features",
    "fit_center",
    "fit_radius",
    "learn_contract",
    "learn_contract_from_samples",
    "pinball_loss",
    "required_samples",
    "rng_for",
]

CONTRACT_FORMAT = "pcverify.contract"
CONTRACT_VERSION = 1

# relative padding on the radius intercept so that points the LP
# interpolates exactly stay covered after floating-point evaluation
_RADIUS_PAD = 1e-9


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``seed`` and a stream path."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(ss))


# -- calibration -----------------------------------------------------------

def _check_fraction(name: str, v: float) -> None:
    if not (0.0 < v < 1.0):
        raise InvalidParam(f"{name} must lie in (0, 1), got {v!r}")


def required_samples(epsilon: float, delta: float) -> int:
    """Smallest ``n`` with ``exp(-2 n eps^2) <= delta``."""
    _check_fraction("epsilon", epsilon)
    _check_fraction("delta", delta)
    return int(math.ceil(-math.log(delta) / (2.0 * epsilon * epsilon)))


def epsilon_for_samples(n: int, delta: float) -> float:
    """Hoeffding gap for a fixed sample count."""
    if n < 1:
        raise InvalidParam("need at least one sample")
    _check_fraction("delta", delta)
    return math.sqrt(-math.log(delta) / (2.0 * n))


# -- features --------------------------------------------------------------

def _affine_features(X: np.ndarray) -> np.ndarray:
    return X


def _quadratic_features(X: np.ndarray) -> np.ndarray:
    n = X.shape[1]
    cols = [X] + [X[:, i:i + 1] * X[:, j:j + 1] for i in range(n) for j in range(i, n)]
    return np.concatenate(cols, axis=1)


FEATURE_MAPS = {"affine": _affine_features, "quadratic": _quadratic_features}


def features(X: np.ndarray, feature_map_id: str = "affine") -> np.ndarray:
    try:
        fm = FEATURE_MAPS[feature_map_id]
    except KeyError:
        raise InvalidParam(f"unknown feature map {feature_map_id!r}") from None
    return fm(np.atleast_2d(np.asarray(X, dtype=float)))


def _feature_components(xs: Sequence, feature_map_id: str) -> list:
    """Feature vector of a generic component sequence (intervals, jets, floats)."""
    xs = list(xs)
    if feature_map_id == "affine":
        return xs
    n = len(xs)
    out = list(xs)
    for i in range(n):
        for j in range(i, n):
            out.append(sqr(xs[i]) if i == j else xs[i] * xs[j])
    return out


# -- samples and sampling --------------------------------------------------

@dataclass(frozen=True)
class SampleSet:
    """Labelled samples ``<x_i, e_i, y_i>`` stored column-wise."""

    X: np.ndarray
    E: np.ndarray
    Y: np.ndarray

    def __post_init__(self) -> None:
        if not (self.X.shape[0] == self.E.shape[0] == self.Y.shape[0]):
            raise DimensionMismatch("sample arrays disagree on the sample count")

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "SampleSet":
        return SampleSet(self.X[idx], self.E[idx], self.Y[idx])


EnvDomain = Union[HyperRect, EnvGrid]


@dataclass(frozen=True)
class SamplerSpec:
    """The sampling distribution ``D`` over states and environments.

    ``uniform_box`` draws states uniformly from ``state_box``;
    ``reference_tube`` picks a uniform time index on ``reference`` (a
    ``(T+1, n)`` array) and perturbs uniformly within ``tube_radius``,
    clipped to ``state_box``. Environments are uniform over the box or over
    the active cells of a grid.
    """

    kind: str
    state_box: HyperRect
    env: EnvDomain
    seed: int = 0
    tube_radius: Optional[np.ndarray] = None
    reference: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in ("uniform_box", "reference_tube"):
            raise InvalidParam(f"unknown sampler kind {self.kind!r}")
        if self.kind == "reference_tube" and (self.reference is None or self.tube_radius is None):
            raise InvalidParam("reference_tube sampling needs a reference and a tube radius")

    def with_env(self, env: EnvDomain) -> "SamplerSpec":
        return SamplerSpec(self.kind, self.state_box, env, self.seed, self.tube_radius, self.reference)

    def draw_states(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform_box":
            return self.state_box.sample(rng, n)
        ref = np.asarray(self.reference, dtype=float)
        t = rng.integers(0, ref.shape[0], size=n)
        u = rng.uniform(-1.0, 1.0, size=(n, ref.shape[1]))
        X = ref[t] + u * np.asarray(self.tube_radius, dtype=float)
        return np.clip(X, self.state_box.lo, self.state_box.hi)

    def draw_envs(self, rng: np.random.Generator, n: int, env: Optional[EnvDomain] = None) -> np.ndarray:
        env = self.env if env is None else env
        if isinstance(env, EnvGrid):
            return env.sample(rng, n)
        return env.sample(rng, n)

    def draw(self, n: int, stream: Sequence[int] = (0,), env: Optional[EnvDomain] = None) -> tuple:
        """``(X, E)`` for ``n`` samples on the given stream of this seed."""
        rng = rng_for(self.seed, *stream)
        X = self.draw_states(rng, n)
        E = self.draw_envs(rng, n, env)
        return X, E


# -- the contract ----------------------------------------------------------

@dataclass(frozen=True)
class Calibration:
    pr: float
    epsilon: float
    delta: float
    n_samples: int
    quantile: float
    empirical_conformance: float
    per_dim_coverage: tuple = ()
    clamp_count: int = 0


@dataclass(frozen=True)
class PerceptionContract:
    """Per-dim affine (in the features) center and radius models.

    ``center_coef`` and ``radius_coef`` have shape ``(m, p)`` where ``p`` is
    the feature count; intercepts have shape ``(m,)``.
    """

    observed_dims: tuple
    feature_map_id: str
    center_coef: np.ndarray
    center_intercept: np.ndarray
    radius_coef: np.ndarray
    radius_intercept: np.ndarray
    state_domain: HyperRect
    calibration: Calibration
    version: int = 0
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def n_obs(self) -> int:
        return len(self.observed_dims)

    @property
    def n_state(self) -> int:
        return self.state_domain.ndim

    def center(self, X: np.ndarray) -> np.ndarray:
        return features(X, self.feature_map_id) @ self.center_coef.T + self.center_intercept

    def radius_raw(self, X: np.ndarray) -> np.ndarray:
        return features(X, self.feature_map_id) @ self.radius_coef.T + self.radius_intercept

    def radius(self, X: np.ndarray) -> np.ndarray:
        return np.maximum(self.radius_raw(X), 0.0)

    def conforms(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Per-sample flag: every observed dim inside its interval."""
        return np.all(self.conforms_per_dim(X, Y), axis=1)

    def conforms_per_dim(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.abs(np.atleast_2d(Y) - self.center(X)) <= self.radius(X)

    def clamp(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Project observations into the contract's box at each state."""
        c = self.center(X)
        r = self.radius(X)
        return np.clip(Y, c - r, c + r)

    def center_generic(self, xs: Sequence) -> list:
        """Center components for a generic state (intervals, jets, floats)."""
        phi = _feature_components(xs, self.feature_map_id)
        out = []
        for j in range(self.n_obs):
            acc = float(self.center_intercept[j])
            for k, f in enumerate(phi):
                c = float(self.center_coef[j, k])
                if c != 0.0:
                    acc = f * c + acc
            out.append(acc)
        return out

    def radius_bound(self, box: HyperRect) -> np.ndarray:
        """Upper bound on the clamped radius over ``box``, per observed dim."""
        _, hi = _model_image(self.radius_coef, self.radius_intercept, box, self.feature_map_id)
        return np.maximum(hi, 0.0)

    def center_image(self, box: HyperRect) -> tuple:
        return _model_image(self.center_coef, self.center_intercept, box, self.feature_map_id)

    def affine_center(self) -> Optional[tuple]:
        """``(C, d)`` with ``M_c(x) = C x + d`` when the feature map is affine."""
        if self.feature_map_id != "affine":
            return None
        return self.center_coef, self.center_intercept

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        cal = self.calibration
        return {
            "format": CONTRACT_FORMAT,
            "format_version": CONTRACT_VERSION,
            "feature_map_id": self.feature_map_id,
            "observed_dims": list(self.observed_dims),
            "state_domain": {"lo": self.state_domain.lo.tolist(), "hi": self.state_domain.hi.tolist()},
            "center": {"coef": self.center_coef.tolist(), "intercept": self.center_intercept.tolist()},
            "radius": {"coef": self.radius_coef.tolist(), "intercept": self.radius_intercept.tolist()},
            "calibration": {
                "pr": cal.pr,
                "epsilon": cal.epsilon,
                "delta": cal.delta,
                "n_samples": cal.n_samples,
                "quantile": cal.quantile,
                "empirical_conformance": cal.empirical_conformance,
                "per_dim_coverage": list(cal.per_dim_coverage),
                "clamp_count": cal.clamp_count,
            },
            "version": self.version,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PerceptionContract":
        if d.get("format") != CONTRACT_FORMAT:
            raise InvalidParam("not a serialized contract")
        if d.get("format_version") != CONTRACT_VERSION:
            raise InvalidParam(f"unsupported contract format version {d.get('format_version')!r}")
        cal = dict(d["calibration"])
        cal["per_dim_coverage"] = tuple(cal.get("per_dim_coverage", ()))
        return cls(
            observed_dims=tuple(d["observed_dims"]),
            feature_map_id=d["feature_map_id"],
            center_coef=np.array(d["center"]["coef"], dtype=float),
            center_intercept=np.array(d["center"]["intercept"], dtype=float),
            radius_coef=np.array(d["radius"]["coef"], dtype=float),
            radius_intercept=np.array(d["radius"]["intercept"], dtype=float),
            state_domain=HyperRect(d["state_domain"]["lo"], d["state_domain"]["hi"]),
            calibration=Calibration(**cal),
            version=int(d.get("version", 0)),
        )

    @classmethod
    def from_json(cls, text: str) -> "PerceptionContract":
        return cls.from_dict(json.loads(text))


def _model_image(coef: np.ndarray, intercept: np.ndarray, box: HyperRect, feature_map_id: str) -> tuple:
    if feature_map_id == "affine":
        return affine_image(coef, intercept, box)
    # natural extension: bound every feature, then treat them as independent
    phi = _feature_components([Interval(lo, hi) for lo, hi in zip(box.lo, box.hi)], feature_map_id)
    fbox = HyperRect([f.lo for f in phi], [f.hi for f in phi])
    return affine_image(coef, intercept, fbox)


def contract_output_set(contract: PerceptionContract, state_box: HyperRect,
                        events: Optional[list] = None) -> HyperRect:
    """Box over observations containing ``M(x)`` for every ``x`` in the box.

    If the box leaves the contract's state domain an extrapolation event is
    appended to ``events`` (when given); the result is still returned.
    """
    if state_box.ndim != contract.n_state:
        raise DimensionMismatch(f"{state_box.ndim}-d box for a contract over {contract.n_state} dims")
    if events is not None and not contract.state_domain.contains(state_box):
        events.append(state_box)
    lo, hi = contract.center_image(state_box)
    r = contract.radius_bound(state_box)
    return HyperRect(np.nextafter(lo - r, -np.inf), np.nextafter(hi + r, np.inf))


def empirical_conformance(contract: PerceptionContract, samples: SampleSet) -> float:
    if len(samples) == 0:
        raise InvalidParam("empirical conformance of an empty sample set")
    return float(np.mean(contract.conforms(samples.X, samples.Y)))


# -- fitting ---------------------------------------------------------------

def _standardize(Phi: np.ndarray) -> tuple:
    mu = Phi.mean(axis=0)
    sd = Phi.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return (Phi - mu) / sd, mu, sd


def fit_center(X: np.ndarray, Y: np.ndarray, feature_map_id: str = "affine") -> tuple:
    """Least squares of each column of ``Y`` on the features of ``X``.

    Returns ``(coef (m, p), intercept (m,))``.
    """
    Phi = features(X, feature_map_id)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    N, p = Phi.shape
    if N < p + 1:
        raise SingularDesign(f"{N} samples for {p} features plus an intercept")
    if not np.all(np.isfinite(Phi)):
        raise InvalidParam("non-finite features")
    Z, mu, sd = _standardize(Phi)
    A = np.hstack([np.ones((N, 1)), Z])
    s = np.linalg.svd(A, compute_uv=False)
    if s[-1] <= 1e-10 * s[0]:
        _, _, Vt = np.linalg.svd(A, full_matrices=False)
        null = Vt[-1]
        names = ["intercept"] + [f"phi{k}" for k in range(p)]
        collinear = tuple(n for n, v in zip(names, null) if abs(v) > 1e-3)
        raise SingularDesign(f"design matrix is rank deficient; collinear: {', '.join(collinear)}", collinear)
    beta, *_ = np.linalg.lstsq(A, Y, rcond=None)
    coef = (beta[1:] / sd[:, None]).T
    intercept = beta[0] - coef @ mu
    return coef, intercept


def pinball_loss(r: np.ndarray, pred: np.ndarray, quantile: float) -> float:
    """Weighted absolute loss: ``quantile`` above the fit, ``1 - quantile`` below."""
    diff = np.asarray(r, dtype=float) - np.asarray(pred, dtype=float)
    return float(np.sum(np.where(diff >= 0, quantile * diff, (quantile - 1.0) * diff)))


def _quantile_lp(Z: np.ndarray, r: np.ndarray, quantile: float) -> np.ndarray:
    """Quantile regression of ``r`` on ``[1, Z]`` via its LP dual.

    The primal ``min q sum(u+) + (1-q) sum(u-)`` s.t. ``A b + u+ - u- = r``
    has the dual ``max r.w`` s.t. ``A^T w = 0``, ``q-1 <= w <= q``, which is
    far smaller (one row per coefficient). The primal coefficients are the
    negated equality multipliers.
    """
    N, k = Z.shape
    A = np.hstack([np.ones((N, 1)), Z])
    res = linprog(-r, A_eq=A.T, b_eq=np.zeros(k + 1), bounds=(quantile - 1.0, quantile), method="highs")
    if res.status != 0:
        raise SolverFailure(f"quantile LP failed (status {res.status}, {res.nit} iterations): {res.message}")
    return -np.asarray(res.eqlin.marginals, dtype=float)


def fit_radius(X: np.ndarray, r: np.ndarray, quantile: float, feature_map_id: str = "affine") -> tuple:
    """Quantile regression of residual magnitudes ``r`` on the features of ``X``.

    ``feature_map_id="constant"`` fits an intercept only. Returns ``(coef,
    intercept)`` for one output dim.
    """
    if not (0.0 < quantile < 1.0):
        raise InvalidParam(f"quantile must lie in (0, 1), got {quantile!r}")
    r = np.asarray(r, dtype=float).reshape(-1)
    if np.any(r < 0):
        raise InvalidParam("residual magnitudes must be non-negative")
    if feature_map_id == "constant":
        beta = _quantile_lp(np.zeros((r.size, 0)), r, quantile)
        return np.zeros(0), float(beta[0])
    Phi = features(X, feature_map_id)
    if Phi.shape[0] != r.size:
        raise DimensionMismatch("feature rows and residuals disagree")
    Z, mu, sd = _standardize(Phi)
    beta = _quantile_lp(Z, r, quantile)
    coef = beta[1:] / sd
    intercept = float(beta[0] - coef @ mu)
    return coef, intercept


def learn_contract_from_samples(samples: SampleSet, observed_dims: Sequence[int], state_domain: HyperRect,
                                pr: float, epsilon: float, delta: float,
                                feature_map_id: str = "affine", version: int = 0) -> PerceptionContract:
    """Fit the center, then the radius at the per-dim quantile, on given data.

    With ``m`` observed dims each radius is fitted at ``(pr + eps)^(1/m)`` so
    the joint target is about ``pr + eps``; joint coverage is measured.
    """
    _check_fraction("pr", pr)
    _check_fraction("epsilon", epsilon)
    _check_fraction("delta", delta)
    if pr + epsilon >= 1.0:
        raise InvalidParam("pr + epsilon must be below 1")
    m = samples.Y.shape[1]
    q = (pr + epsilon) ** (1.0 / m)
    C, d = fit_center(samples.X, samples.Y, feature_map_id)
    resid = np.abs(samples.Y - (features(samples.X, feature_map_id) @ C.T + d))
    rc = np.empty_like(C)
    ri = np.empty(m)
    for j in range(m):
        rc[j], ri[j] = fit_radius(samples.X, resid[:, j], q, feature_map_id)
        ri[j] += _RADIUS_PAD * max(1.0, float(resid[:, j].max()))
    raw = features(samples.X, feature_map_id) @ rc.T + ri
    clamp_count = int(np.count_nonzero(raw < 0))
    draft = PerceptionContract(tuple(observed_dims), feature_map_id, C, d, rc, ri, state_domain,
                               Calibration(pr, epsilon, delta, len(samples), q, 0.0), version)
    per_dim = draft.conforms_per_dim(samples.X, samples.Y)
    cal = Calibration(pr, epsilon, delta, len(samples), q, float(np.mean(np.all(per_dim, axis=1))),
                      tuple(float(v) for v in per_dim.mean(axis=0)), clamp_count)
    return PerceptionContract(tuple(observed_dims), feature_map_id, C, d, rc, ri, state_domain, cal, version)


def draw_samples(sampler: SamplerSpec, observer: Callable, n: int, stream: Sequence[int] = (0,),
                 env: Optional[EnvDomain] = None) -> SampleSet:
    X, E = sampler.draw(n, stream, env)
    Y = np.asarray(observer(X, E), dtype=float)
    return SampleSet(X, E, Y)


def learn_contract(state_box: HyperRect, env: EnvDomain, observer: Callable, pr: float, epsilon: float,
                   delta: float, sampler: SamplerSpec, observed_dims: Sequence[int],
                   feature_map_id: str = "affine", n_samples: Optional[int] = None,
                   version: int = 0, return_samples: bool = False):
    """Draw ``required_samples(epsilon, delta)`` samples and fit a contract.

    ``n_samples`` overrides the Hoeffding count for the fixed-data variant;
    in that case the recorded epsilon is the gap the count actually buys.
    Samples come from the sampler's stream ``(version,)`` so every re-learn
    sees fresh data.
    """
    if pr + epsilon >= 1.0:
        raise InvalidParam("pr + epsilon must be below 1")
    if n_samples is None:
        n = required_samples(epsilon, delta)
    else:
        n = int(n_samples)
        epsilon = epsilon_for_samples(n, delta)
    sampler = SamplerSpec(sampler.kind, state_box, env, sampler.seed, sampler.tube_radius, sampler.reference)
    samples = draw_samples(sampler, observer, n, (1, version), env)
    contract = learn_contract_from_samples(samples, observed_dims, state_box, pr, epsilon, delta,
                                           feature_map_id, version)
    return (contract, samples) if return_samples else contract
