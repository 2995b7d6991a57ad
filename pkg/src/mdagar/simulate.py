"""
Synthetic data for the bivariate calibration design and the three-disease
order-recovery design.

The truth uses an exponential covariance ``D(rho)_{jj'} = exp(-phi d(j, j'))``
with ``phi = -log(rho)`` on planar region coordinates, so the fitted DAGAR
model is misspecified in a controlled way.  Per-position parameters
(``tau``, ``rho``, ``eta``) follow the hierarchy; ``beta`` and ``sigma2``
belong to the diseases themselves.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import NumericalError, ValidationError
from .evidence import BridgeConfig, compare_orderings, enumerate_orderings
from .graph import ArealGraph, grid_coordinates, grid_graph
from .joint import InteractionCoeffs, cross_moments
from .model import Dataset, ModelSpec, PriorSpec
from .sampler import ChainConfig

log = logging.getLogger(__name__)

# (eta0, eta1) of the two-disease regimes
ETA_REGIMES = {"low": (0.05, 0.1), "medium": (0.5, 0.3), "high": (2.5, 0.5)}

BETA_TRUE = ((1.0, 5.0), (2.0, 4.0, 5.0), (5.0, 3.0, 6.0))
THREE_DISEASE_RHO = (0.2, 0.8, 0.5)
THREE_DISEASE_ETA = {(1, 0): (0.5, 0.3), (2, 0): (1.0, 0.6), (2, 1): (1.5, 0.9)}


def exp_decay_covariance(coords, rho: float) -> np.ndarray:
    """``exp(-phi d)`` with ``phi = -log(rho)`` and Euclidean ``d``."""
    if not 0.0 < rho < 1.0:
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")
    coords = np.asarray(coords, dtype=float)
    d = cdist(coords, coords)
    off = d[~np.eye(len(coords), dtype=bool)]
    if off.size and np.min(off) <= 0.0:
        raise ValidationError("coincident coordinates make the covariance singular")
    return np.exp(np.log(rho) * d)


# -- geometry ----------------------------------------------------------------

GRID_SHAPE = (7, 7)
GRID_DROP = ((6, 6),)


def default_geometry():
    """48-region fixture: 7x7 rook grid without its last corner, unit spacing."""
    g = grid_graph(*GRID_SHAPE, drop=GRID_DROP)
    return g, grid_coordinates(*GRID_SHAPE, drop=GRID_DROP)


def fixture_paths():
    """Adjacency and coordinate files shipped for :func:`default_geometry`."""
    base = resources.files("mdagar") / "data"
    return Path(str(base / "grid48.adj")), Path(str(base / "grid48_coords.csv"))


def load_coordinates(path, graph: ArealGraph) -> np.ndarray:
    """Read ``label,x,y`` rows and return coordinates in graph order."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["label", "x", "y"]:
            raise ValidationError(f"{path}: header must be label,x,y")
        got = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValidationError(f"{path}:{lineno}: expected 3 fields")
            try:
                got[row[0].strip()] = (float(row[1]), float(row[2]))
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-numeric coordinate") from None
    missing = [lab for lab in graph.labels if lab not in got]
    unknown = sorted(set(got) - set(graph.labels))
    if missing or unknown:
        raise ValidationError(f"{path}: regions without coordinates {missing}; "
                              f"unknown labels {unknown}")
    return np.array([got[lab] for lab in graph.labels])


def write_coordinates(graph: ArealGraph, coords, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["label", "x", "y"])
        for lab, (x, y) in zip(graph.labels, np.asarray(coords)):
            out.writerow([lab, repr(float(x)), repr(float(y))])


# -- generator ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class GeneratorConfig:
    """Truth for synthetic data.

    ``tau``, ``rho`` and ``eta`` are indexed by hierarchy position; ``beta``
    and ``sigma2`` by disease.  ``truth="exponential"`` needs ``coords``;
    ``truth="dagar"`` draws the latent field from the fitted model family.
    """

    graph: ArealGraph
    coords: np.ndarray = None
    beta: tuple = BETA_TRUE[:2]
    sigma2: tuple = (0.4, 0.4)
    tau: tuple = (0.25, 0.25)
    rho: tuple = (0.2, 0.8)
    eta: InteractionCoeffs = None
    n_replicates: int = 1
    seed: int = 0
    truth: str = "exponential"

    def __post_init__(self):
        q = len(self.beta)
        object.__setattr__(self, "beta", tuple(np.asarray(b, dtype=float) for b in self.beta))
        for name in ("sigma2", "tau", "rho"):
            v = np.asarray(getattr(self, name), dtype=float).ravel()
            if v.size != q:
                raise ValidationError(f"{name} has {v.size} entries, expected q={q}")
            object.__setattr__(self, name, v)
        if self.eta is None:
            object.__setattr__(self, "eta", InteractionCoeffs.zeros(q))
        if self.eta.q != q:
            raise ValidationError(f"eta table is for q={self.eta.q}, expected q={q}")
        if np.any(self.sigma2 <= 0) or np.any(self.tau <= 0):
            raise ValidationError("sigma2 and tau must be positive")
        if np.any(self.rho <= 0) or np.any(self.rho >= 1):
            raise ValidationError("rho must lie in (0, 1)")
        if self.n_replicates < 1:
            raise ValidationError("n_replicates must be >= 1")
        if self.truth not in ("exponential", "dagar"):
            raise ValidationError(f"unknown truth {self.truth!r}")
        if self.truth == "exponential":
            if self.coords is None:
                raise ValidationError("the exponential truth needs region coordinates")
            c = np.asarray(self.coords, dtype=float)
            if c.shape != (self.graph.k, 2):
                raise ValidationError(f"coords must have shape ({self.graph.k}, 2)")
            object.__setattr__(self, "coords", c)

    @property
    def q(self) -> int:
        return len(self.beta)

    @property
    def k(self) -> int:
        return self.graph.k

    def position_covariances(self) -> list:
        """Covariance of ``eps`` at each position before scaling by ``1 / tau``."""
        if self.truth == "exponential":
            return [exp_decay_covariance(self.coords, r) for r in self.rho]
        from .dagar import build_dagar
        from .graph import directed_neighbor_sets
        ns = directed_neighbor_sets(self.graph)
        return [np.linalg.inv(build_dagar(ns, r).dense()) for r in self.rho]


@dataclass
class SimReplicate:
    dataset: Dataset
    w: np.ndarray          # (q, k), original disease order
    ordering: tuple


def _design(cfg: GeneratorConfig, rng) -> tuple:
    return tuple(rng.standard_normal((cfg.k, b.size)) for b in cfg.beta)


def truth_precision(cfg: GeneratorConfig, ordering=None) -> np.ndarray:
    """Dense precision of ``w`` (disease-major, original disease order)."""
    q, k = cfg.q, cfg.k
    order = tuple(range(q)) if ordering is None else tuple(ordering)
    M = cfg.graph.adjacency_dense()
    U = np.eye(q * k)
    for i in range(q):
        for ip in range(i):
            U[i * k:(i + 1) * k, ip * k:(ip + 1) * k] = -(cfg.eta.eta0[i, ip] * np.eye(k)
                                                          + cfg.eta.eta1[i, ip] * M)
    lam = np.zeros((q * k, q * k))
    for i, D in enumerate(cfg.position_covariances()):
        lam[i * k:(i + 1) * k, i * k:(i + 1) * k] = cfg.tau[i] * np.linalg.inv(D)
    Qpos = U.T @ lam @ U
    idx = np.concatenate([np.arange(k) + k * int(np.where(np.array(order) == d)[0][0])
                          for d in range(q)])
    Q = Qpos[np.ix_(idx, idx)]
    return 0.5 * (Q + Q.T)


def sample_latent(cfg: GeneratorConfig, rng, ordering=None, size: int = None,
                  chols=None) -> np.ndarray:
    """Draws of ``w`` with shape ``(q, k)`` or ``(size, q, k)`` in original disease order."""
    q, k = cfg.q, cfg.k
    order = tuple(range(q)) if ordering is None else tuple(ordering)
    if sorted(order) != list(range(q)):
        raise ValidationError(f"ordering {order} is not a permutation of {q} diseases")
    if chols is None:
        chols = [np.linalg.cholesky(D) for D in cfg.position_covariances()]
    M = cfg.graph.adjacency
    n = 1 if size is None else size
    wpos = np.empty((n, q, k))
    for i in range(q):
        eps = rng.standard_normal((n, k)) @ chols[i].T / np.sqrt(cfg.tau[i])
        for ip in range(i):
            e0, e1 = cfg.eta.eta0[i, ip], cfg.eta.eta1[i, ip]
            if e0 or e1:
                eps = eps + e0 * wpos[:, ip] + e1 * (M @ wpos[:, ip].T).T
        wpos[:, i] = eps
    w = np.empty_like(wpos)
    w[:, list(order)] = wpos
    return w[0] if size is None else w


def generate(cfg: GeneratorConfig, ordering=None, X=None) -> list:
    """Replicate datasets; ``X`` is drawn once (or supplied) and shared by all.

    Parameters
    ----------
    cfg : GeneratorConfig
    ordering : sequence of int, optional
        ``ordering[n]`` is the disease generated at position ``n``.
    X : tuple of ndarray, optional
        Fixed designs; drawn from ``N(0, I)`` with the config seed otherwise.

    Returns
    -------
    list of SimReplicate
    """
    order = tuple(range(cfg.q)) if ordering is None else tuple(int(o) for o in ordering)
    rng = np.random.default_rng(cfg.seed)
    X = _design(cfg, rng) if X is None else tuple(np.asarray(x, dtype=float) for x in X)
    try:
        chols = [np.linalg.cholesky(D) for D in cfg.position_covariances()]
    except np.linalg.LinAlgError as exc:
        raise NumericalError("truth covariance is not positive definite") from exc
    labels = tuple(f"d{i + 1}" for i in range(cfg.q))
    out = []
    for _ in range(cfg.n_replicates):
        w = sample_latent(cfg, rng, order, chols=chols)
        y = tuple(X[i] @ cfg.beta[i] + w[i] + np.sqrt(cfg.sigma2[i]) * rng.standard_normal(cfg.k)
                  for i in range(cfg.q))
        out.append(SimReplicate(Dataset(y, X, labels, cfg.graph.labels), w, order))
    return out


def bivariate_config(regime: str = "low", graph=None, coords=None, n_replicates: int = 1,
                     seed: int = 0, **kw) -> GeneratorConfig:
    """Two-disease truth with one of the named eta regimes."""
    if regime not in ETA_REGIMES:
        raise ValidationError(f"unknown regime {regime!r}; choose from {sorted(ETA_REGIMES)}")
    if graph is None:
        graph, coords = default_geometry()
    eta = InteractionCoeffs.from_pairs(2, {(1, 0): ETA_REGIMES[regime]})
    return GeneratorConfig(graph, coords, eta=eta, n_replicates=n_replicates, seed=seed, **kw)


def generate_bivariate(cfg: GeneratorConfig) -> list:
    if cfg.q != 2:
        raise ValidationError(f"bivariate generator needs q=2, got q={cfg.q}")
    return generate(cfg)


def three_disease_config(graph=None, coords=None, n_replicates: int = 1, seed: int = 0,
                         eta=None, **kw) -> GeneratorConfig:
    """Three-disease truth; ``tau``, ``rho`` and ``eta`` are by hierarchy position."""
    if graph is None:
        graph, coords = default_geometry()
    eta = InteractionCoeffs.from_pairs(3, THREE_DISEASE_ETA) if eta is None else eta
    return GeneratorConfig(graph, coords, beta=BETA_TRUE, sigma2=(0.4, 0.4, 0.4),
                           tau=(0.25, 0.25, 0.25), rho=THREE_DISEASE_RHO, eta=eta,
                           n_replicates=n_replicates, seed=seed, **kw)


def generate_three_disease(cfg: GeneratorConfig, true_order) -> list:
    if cfg.q != 3:
        raise ValidationError(f"three-disease generator needs q=3, got q={cfg.q}")
    order = tuple(int(o) for o in true_order)
    if sorted(order) != [0, 1, 2]:
        raise ValidationError(f"{true_order} is not a permutation of three diseases")
    return generate(cfg, order)


def mean_within_region_correlation(cfg: GeneratorConfig) -> tuple:
    """Mean, min and max over regions of ``corr(w_1j, w_2j)`` under the truth."""
    if cfg.q != 2:
        raise ValidationError("within-region correlation needs q=2")
    D1, D2 = cfg.position_covariances()
    *_, corr = cross_moments(D1, np.diag(D2), cfg.tau[0], cfg.tau[1],
                             cfg.eta.eta0[1, 0], cfg.eta.eta1[1, 0], cfg.graph.adjacency)
    return float(np.mean(corr)), float(np.min(corr)), float(np.max(corr))


# -- order recovery ----------------------------------------------------------

@dataclass
class RecoveryResult:
    orderings: list
    counts: np.ndarray          # [true, selected]
    n_ok: np.ndarray            # successful replicates per true ordering
    selected: dict              # true ordering -> list of selected index (or None)
    errors: list = field(default_factory=list)

    @property
    def proportions(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.counts / self.n_ok[:, None]


def run_order_recovery(cfg: GeneratorConfig, chain: ChainConfig, bridge: BridgeConfig = None,
                       prior: PriorSpec = None, true_orders=None, n_chains: int = 1,
                       jobs: int = 1, progress=None) -> RecoveryResult:
    """Selection-proportion table: rows are true orderings, columns the selected ones.

    Each replicate fits every ordering, estimates its evidence and records the
    argmax.  A replicate whose comparison fails is logged and left out of the
    denominator for its row.
    """
    if cfg.q != 3:
        raise ValidationError("order recovery needs a three-disease generator")
    bridge = BridgeConfig() if bridge is None else bridge
    prior = PriorSpec() if prior is None else prior
    orderings = enumerate_orderings(3)
    true_orders = orderings if true_orders is None else [tuple(t) for t in true_orders]
    T = len(orderings)
    counts = np.zeros((T, T), dtype=int)
    n_ok = np.zeros(T, dtype=int)
    selected, errors = {}, []
    X = _design(cfg, np.random.default_rng(cfg.seed))
    for t_order in true_orders:
        row = orderings.index(t_order)
        sub = replace(cfg, seed=int(np.random.SeedSequence([cfg.seed, row]).generate_state(1)[0]))
        reps = generate(sub, t_order, X=X)
        selected[t_order] = []
        for r, rep in enumerate(reps):
            spec = ModelSpec(rep.dataset, cfg.graph, prior)
            ch = replace(chain, seed=int(np.random.SeedSequence([chain.seed, row, r])
                                         .generate_state(1)[0]))
            try:
                res = compare_orderings(spec, ch, n_chains=n_chains, bridge=bridge, jobs=jobs)
            except (NumericalError, ValidationError) as exc:
                errors.append((t_order, r, str(exc)))
                selected[t_order].append(None)
                log.warning("true order %s replicate %d failed: %s", t_order, r, exc)
                continue
            best = res.posterior.best
            counts[row, best] += 1
            n_ok[row] += 1
            selected[t_order].append(best)
            if progress is not None:
                progress(t_order, r, res)
    return RecoveryResult(orderings, counts, n_ok, selected, errors)


def write_recovery_table(result: RecoveryResult, path) -> None:
    """CSV mirroring a true-by-selected proportion table (1-based labels)."""
    from .evidence import ordering_label
    labels = [ordering_label(o) for o in result.orderings]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["true_ordering"] + labels + ["n_replicates"])
        for t, lab in enumerate(labels):
            if result.n_ok[t] == 0:
                continue
            out.writerow([lab] + [f"{p:.4f}" for p in result.proportions[t]] + [result.n_ok[t]])
