"""No-U-Turn sampler with dual-averaging step-size adaptation.

The transition is the multinomial variant of NUTS: candidate points are
drawn in proportion to ``exp(-H)`` across the trajectory (uniform
progressive sampling inside subtrees, biased progressive sampling when a new
subtree is attached), and the trajectory stops on the generalised no-U-turn
criterion checked across and within subtrees. The metric is the identity;
targets are expected to be reasonably scaled.

Each chain draws from its own Philox stream keyed by ``(seed, chain)``, so
the number of chains never changes the draws of an individual chain.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .exceptions import InitializationError

MAX_DELTA_H = 1000.0


@dataclass
class TargetDensity:
    """Log-density (up to a constant) and its gradient on ``R^dimension``.

    ``transform`` maps a sampler position to the vector stored as a draw
    (identity when omitted) and ``param_names`` labels that vector.
    ``initial_point`` is the centre of the initialisation jitter.
    """

    dimension: int
    logp_grad: Callable[[np.ndarray], tuple[float, np.ndarray]]
    param_names: Sequence[str] | None = None
    transform: Callable[[np.ndarray], np.ndarray] | None = None
    initial_point: np.ndarray | None = None

    def output(self, q):
        return np.asarray(q if self.transform is None else self.transform(q), dtype=float)

    def names(self) -> list[str]:
        if self.param_names is not None:
            return list(self.param_names)
        size = self.output(self.start()).size
        return [f"theta[{i}]" for i in range(size)]

    def start(self):
        if self.initial_point is None:
            return np.zeros(self.dimension)
        return np.asarray(self.initial_point, dtype=float)


@dataclass
class SamplerConfig:
    chains: int = 4
    draws: int = 10_000
    warmup: int = 2_000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_jitter: float = 2.0
    n_jobs: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.draws < 1:
            raise ValueError("chains and draws must be positive")
        if self.warmup < 0:
            raise ValueError("warmup must be non-negative")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_tree_depth < 0:
            raise ValueError("max_tree_depth must be non-negative")

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


@dataclass
class PosteriorSamples:
    """Post-warmup draws, shape ``(chains, draws, params)``, and sampler statistics."""

    draws: np.ndarray
    param_names: list[str]
    accept_stats: np.ndarray
    step_sizes: np.ndarray
    divergences: np.ndarray
    tree_depths: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=int))
    n_leapfrog: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=int))
    energy: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def pooled(self) -> np.ndarray:
        """Draws with chains concatenated, shape ``(chains * draws, params)``."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def param(self, name: str) -> np.ndarray:
        return self.draws[:, :, self.param_names.index(name)]

    def summary(self) -> dict:
        return {
            "chains": int(self.n_chains),
            "draws": int(self.n_draws),
            "param_names": list(self.param_names),
            "step_sizes": self.step_sizes.tolist(),
            "divergences": self.divergences.astype(int).tolist(),
            "mean_accept_stat": self.accept_stats.mean(axis=1).tolist(),
            "mean_tree_depth": (self.tree_depths.mean(axis=1).tolist()
                                if self.tree_depths.size else []),
            "posterior_mean": self.pooled().mean(axis=0).tolist(),
            "posterior_sd": self.pooled().std(axis=0, ddof=1).tolist()
            if self.n_chains * self.n_draws > 1 else [0.0] * len(self.param_names),
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw"] + list(self.param_names))
            for c in range(self.n_chains):
                for d in range(self.n_draws):
                    w.writerow([c, d] + [repr(float(x)) for x in self.draws[c, d]])

    def stats_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["chain", "draw", "accept_stat", "tree_depth", "n_leapfrog",
                        "energy", "step_size"])
            for c in range(self.n_chains):
                for d in range(self.n_draws):
                    w.writerow([c, d, repr(float(self.accept_stats[c, d])),
                                int(self.tree_depths[c, d]), int(self.n_leapfrog[c, d]),
                                repr(float(self.energy[c, d])),
                                repr(float(self.step_sizes[c]))])

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=1))

    @classmethod
    def from_files(cls, draws_csv, summary_json=None, stats_csv=None) -> "PosteriorSamples":
        with open(draws_csv, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(x) for x in row] for row in reader]
        arr = np.asarray(rows)
        names = header[2:]
        chains = int(arr[:, 0].max()) + 1
        n = arr.shape[0] // chains
        draws = arr[:, 2:].reshape(chains, n, len(names))
        step = np.full(chains, np.nan)
        div = np.zeros(chains, dtype=int)
        acc = np.full((chains, n), np.nan)
        depth = np.zeros((chains, n), dtype=int)
        nleap = np.zeros((chains, n), dtype=int)
        energy = np.full((chains, n), np.nan)
        if summary_json is not None and Path(summary_json).exists():
            meta = json.loads(Path(summary_json).read_text())
            step = np.asarray(meta["step_sizes"], dtype=float)
            div = np.asarray(meta["divergences"], dtype=int)
        if stats_csv is not None and Path(stats_csv).exists():
            with open(stats_csv, newline="") as fh:
                reader = csv.reader(fh)
                next(reader)
                st = np.asarray([[float(x) for x in row] for row in reader])
            acc = st[:, 2].reshape(chains, n)
            depth = st[:, 3].astype(int).reshape(chains, n)
            nleap = st[:, 4].astype(int).reshape(chains, n)
            energy = st[:, 5].reshape(chains, n)
        return cls(draws, names, acc, step, div, depth, nleap, energy)


# -- integrator ------------------------------------------------------------------

def _leapfrog(q, p, grad, eps, logp_grad):
    p_half = p + 0.5 * eps * grad
    q_new = q + eps * p_half
    logp_new, grad_new = logp_grad(q_new)
    grad_new = np.asarray(grad_new, dtype=float)
    p_new = p_half + 0.5 * eps * grad_new
    return q_new, p_new, float(logp_new), grad_new


def leapfrog(q, p, eps, target: TargetDensity):
    """One leapfrog step (half kick, drift, half kick) for ``H = -logp(q) + |p|^2 / 2``."""
    q = np.asarray(q, dtype=float)
    _, grad = target.logp_grad(q)
    q_new, p_new, _, _ = _leapfrog(q, np.asarray(p, dtype=float), np.asarray(grad, float),
                                   eps, target.logp_grad)
    return q_new, p_new


def hamiltonian(logp, p) -> float:
    return -logp + 0.5 * float(p @ p)


# -- NUTS transition -----------------------------------------------------------------

class _Trajectory:
    """Accumulators shared by every subtree of one transition."""

    __slots__ = ("logp_grad", "eps", "H0", "rng", "n_leapfrog", "sum_accept", "divergent")

    def __init__(self, logp_grad, eps, H0, rng):
        self.logp_grad = logp_grad
        self.eps = eps
        self.H0 = H0
        self.rng = rng
        self.n_leapfrog = 0
        self.sum_accept = 0.0
        self.divergent = False


class _Subtree:
    __slots__ = ("q", "p", "grad", "logp", "p_beg", "p_end", "rho", "log_w",
                 "s_q", "s_logp", "s_grad")


def _no_uturn(p_a, p_b, rho) -> bool:
    return float(p_a @ rho) > 0.0 and float(p_b @ rho) > 0.0


def _build_tree(traj: _Trajectory, q, p, grad, depth, direction):
    """Extend the trajectory by ``2**depth`` leapfrog steps.

    Returns ``None`` when the subtree diverged or turned back on itself,
    in which case none of its points may be sampled.
    """
    if depth == 0:
        q, p, logp, grad = _leapfrog(q, p, grad, direction * traj.eps, traj.logp_grad)
        H = hamiltonian(logp, p) if math.isfinite(logp) else math.inf
        if not math.isfinite(H):
            H = math.inf
        traj.n_leapfrog += 1
        delta = traj.H0 - H
        traj.sum_accept += 1.0 if delta > 0 else math.exp(delta)
        if -delta > MAX_DELTA_H:
            traj.divergent = True
            return None
        t = _Subtree()
        t.q, t.p, t.grad, t.logp = q, p, grad, logp
        t.p_beg = t.p_end = p
        t.rho = p.copy()
        t.log_w = delta
        t.s_q, t.s_logp, t.s_grad = q, logp, grad
        return t

    init = _build_tree(traj, q, p, grad, depth - 1, direction)
    if init is None:
        return None
    final = _build_tree(traj, init.q, init.p, init.grad, depth - 1, direction)
    if final is None:
        return None

    log_w = np.logaddexp(init.log_w, final.log_w)
    if math.log(traj.rng.random()) < final.log_w - log_w:
        init.s_q, init.s_logp, init.s_grad = final.s_q, final.s_logp, final.s_grad
    rho = init.rho + final.rho
    ok = (_no_uturn(init.p_beg, final.p_end, rho)
          and _no_uturn(init.p_beg, final.p_beg, init.rho + final.p_beg)
          and _no_uturn(init.p_end, final.p_end, final.rho + init.p_end))
    if not ok:
        return None
    init.q, init.p, init.grad, init.logp = final.q, final.p, final.grad, final.logp
    init.p_end = final.p_end
    init.rho = rho
    init.log_w = log_w
    return init


def nuts_draw(q, eps, target: TargetDensity, max_depth: int, rng: np.random.Generator,
              logp=None, grad=None):
    """One multinomial NUTS transition from ``q``.

    Returns ``(q_next, stats)`` where ``stats`` holds ``logp``, ``grad``,
    ``tree_depth``, ``n_leapfrog``, ``divergent``, ``accept_stat`` and
    ``energy``. Random numbers are consumed in a fixed order: the momentum,
    then per doubling one direction uniform, the subtree-merge uniforms and
    one acceptance uniform.
    """
    q = np.asarray(q, dtype=float)
    if logp is None or grad is None:
        logp, grad = target.logp_grad(q)
        grad = np.asarray(grad, dtype=float)
    if not math.isfinite(logp):
        raise InitializationError("log-density is not finite at the starting point")
    p0 = rng.standard_normal(q.size)
    H0 = hamiltonian(logp, p0)
    traj = _Trajectory(target.logp_grad, eps, H0, rng)

    # Backward and forward edges of the trajectory.
    bq, bp, bg = q, p0, grad
    fq, fp, fg = q, p0, grad
    rho = p0.copy()
    log_w = 0.0
    sample = (q, logp, grad)
    depth_reached = 0

    for depth in range(max_depth + 1):
        forward = traj.rng.random() > 0.5
        rho_old = rho
        if forward:
            sub = _build_tree(traj, fq, fp, fg, depth, 1)
        else:
            sub = _build_tree(traj, bq, bp, bg, depth, -1)
        if sub is None:
            break
        depth_reached = depth + 1
        if math.log(traj.rng.random()) < sub.log_w - log_w:
            sample = (sub.s_q, sub.s_logp, sub.s_grad)
        log_w = np.logaddexp(log_w, sub.log_w)
        rho = rho_old + sub.rho
        if forward:
            old_end_p = fp
            fq, fp, fg = sub.q, sub.p, sub.grad
            ok = (_no_uturn(bp, fp, rho)
                  and _no_uturn(bp, sub.p_beg, rho_old + sub.p_beg)
                  and _no_uturn(old_end_p, fp, sub.rho + old_end_p))
        else:
            old_end_p = bp
            bq, bp, bg = sub.q, sub.p, sub.grad
            ok = (_no_uturn(bp, fp, rho)
                  and _no_uturn(bp, old_end_p, sub.rho + old_end_p)
                  and _no_uturn(sub.p_beg, fp, rho_old + sub.p_beg))
        if not ok:
            break

    q_next, logp_next, grad_next = sample
    stats = {
        "logp": float(logp_next),
        "grad": grad_next,
        "tree_depth": depth_reached,
        "n_leapfrog": traj.n_leapfrog,
        "divergent": traj.divergent,
        "accept_stat": traj.sum_accept / max(traj.n_leapfrog, 1),
        "energy": H0,
    }
    return np.asarray(q_next, dtype=float), stats


# -- step-size adaptation -----------------------------------------------------------

class DualAveraging:
    """Nesterov dual averaging of ``log(step size)`` toward a target acceptance."""

    def __init__(self, initial_step_size, target_accept=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10.0 * initial_step_size)
        self.target_accept = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_eps = math.log(initial_step_size)
        self.log_eps_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target_accept - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** -self.kappa
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar
        return math.exp(self.log_eps)

    @property
    def step_size(self) -> float:
        return math.exp(self.log_eps)

    @property
    def final_step_size(self) -> float:
        return math.exp(self.log_eps_bar)


def adapt_step_size(accept_history, target_accept=0.8, initial_step_size=1.0,
                    return_path=False):
    """Replay a warmup history of acceptance statistics through dual averaging.

    Returns the step size proposed after the last update, or the whole path
    of proposed step sizes when ``return_path`` is true.
    """
    da = DualAveraging(initial_step_size, target_accept)
    path = [da.update(float(a)) for a in accept_history]
    if return_path:
        return np.asarray(path)
    return path[-1] if path else initial_step_size


def find_reasonable_step_size(q, target: TargetDensity, rng, logp=None, grad=None) -> float:
    """Double or halve the step size until one leapfrog step's acceptance crosses 1/2."""
    q = np.asarray(q, dtype=float)
    if logp is None or grad is None:
        logp, grad = target.logp_grad(q)
    eps = 1.0
    p = rng.standard_normal(q.size)
    H0 = hamiltonian(logp, p)

    def log_ratio(e):
        _, p1, lp1, _ = _leapfrog(q, p, grad, e, target.logp_grad)
        h = hamiltonian(lp1, p1)
        return H0 - h if math.isfinite(h) else -math.inf

    a = log_ratio(eps)
    direction = 1 if a > math.log(0.5) else -1
    for _ in range(100):
        if direction == 1 and not a > math.log(0.5):
            break
        if direction == -1 and not a < math.log(0.5):
            break
        eps = eps * 2.0 ** direction
        a = log_ratio(eps)
    return eps


# -- chains -------------------------------------------------------------------------

def chain_rng(seed: int, chain: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(chain,))))


def _initial_position(target, config, rng, chain):
    centre = target.start()
    for _ in range(100):
        q = centre + rng.uniform(-config.init_jitter, config.init_jitter, target.dimension)
        logp, grad = target.logp_grad(q)
        if math.isfinite(logp) and np.all(np.isfinite(grad)):
            return q, float(logp), np.asarray(grad, dtype=float)
    raise InitializationError(f"chain {chain}: no finite log-density after 100 attempts",
                              chain=chain)


def run_chain(target: TargetDensity, config: SamplerConfig, chain: int) -> dict:
    rng = chain_rng(config.seed, chain)
    q, logp, grad = _initial_position(target, config, rng, chain)
    eps = find_reasonable_step_size(q, target, rng, logp, grad)
    da = DualAveraging(eps, config.target_accept)
    for _ in range(config.warmup):
        q, st = nuts_draw(q, eps, target, config.max_tree_depth, rng, logp, grad)
        logp, grad = st["logp"], st["grad"]
        eps = da.update(st["accept_stat"])
    if config.warmup > 0:
        eps = da.final_step_size

    first = target.output(q)
    out = np.empty((config.draws, first.size))
    accept = np.empty(config.draws)
    depth = np.empty(config.draws, dtype=int)
    nleap = np.empty(config.draws, dtype=int)
    energy = np.empty(config.draws)
    divergences = 0
    for i in range(config.draws):
        q, st = nuts_draw(q, eps, target, config.max_tree_depth, rng, logp, grad)
        logp, grad = st["logp"], st["grad"]
        out[i] = target.output(q)
        accept[i] = st["accept_stat"]
        depth[i] = st["tree_depth"]
        nleap[i] = st["n_leapfrog"]
        energy[i] = st["energy"]
        divergences += int(st["divergent"])
    return {"draws": out, "accept": accept, "depth": depth, "nleap": nleap,
            "energy": energy, "step_size": eps, "divergences": divergences}


def run_chains(target: TargetDensity, config: SamplerConfig | None = None) -> PosteriorSamples:
    """Warm up and sample ``config.chains`` independent chains.

    Output is assembled in chain order whatever the execution order, so
    results are identical for any ``n_jobs``.
    """
    config = config or SamplerConfig()
    if config.n_jobs == 1 or config.chains == 1:
        results = [run_chain(target, config, c) for c in range(config.chains)]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=config.n_jobs)(
            delayed(run_chain)(target, config, c) for c in range(config.chains)
        )
    return PosteriorSamples(
        draws=np.stack([r["draws"] for r in results]),
        param_names=target.names(),
        accept_stats=np.stack([r["accept"] for r in results]),
        step_sizes=np.array([r["step_size"] for r in results]),
        divergences=np.array([r["divergences"] for r in results], dtype=int),
        tree_depths=np.stack([r["depth"] for r in results]),
        n_leapfrog=np.stack([r["nleap"] for r in results]),
        energy=np.stack([r["energy"] for r in results]),
    )
