"""Lattice evolution of cooperative behavior under pairwise imitation.

Agents sit on a toroidal grid, each a (strategy, vehicle type) tuple. Every
step draws one state's payoff tables, plays each agent against every
neighbor in both roles, and lets each agent imitate one random same-type
neighbor with a Fermi probability in the payoff difference. Optional grid
shuffles model social contact between distant drivers.

Strategy index 0 cooperates, 1 defects; type index 1 is an AV.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericError
from .payoffs import ALL_PAIRS

log = logging.getLogger(__name__)

COOP, DEFECT = 0, 1
HDV_IDX, AV_IDX = 0, 1


@dataclass
class SimConfig:
    """One simulation setting of the Monte Carlo sweep."""

    rows: int = 20
    cols: int = 20
    mpr: float = 0.5
    neighbor_size: int = 2
    noise_k: float = 2.0
    contact_freq: float = 0.0
    steps: int = 200
    reps: int = 20
    init_coop_av: float = 0.51
    init_coop_hdv: float = 0.42

    def validate(self) -> None:
        if self.noise_k <= 0:
            raise DataError("noise parameter must be > 0")
        if not 0.0 <= self.mpr <= 1.0:
            raise DataError("mpr must lie in [0, 1]")
        if self.neighbor_size < 1:
            raise DataError("neighbor_size must be >= 1")
        if self.contact_freq < 0:
            raise DataError("contact_freq must be >= 0")
        for p in (self.init_coop_av, self.init_coop_hdv):
            if not 0.0 <= p <= 1.0:
                raise DataError("initial cooperation proportions must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "rows": self.rows, "cols": self.cols, "mpr": self.mpr,
            "neighbor_size": self.neighbor_size, "noise_k": self.noise_k,
            "contact_freq": self.contact_freq, "steps": self.steps,
            "reps": self.reps, "init_coop_av": self.init_coop_av,
            "init_coop_hdv": self.init_coop_hdv,
        }


@dataclass
class GridWorld:
    rows: int
    cols: int
    strategy: np.ndarray     # flat int8, 0 = cooperate
    vtype: np.ndarray        # flat int8, 1 = AV

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def coop_fractions(self) -> tuple[float, float, float]:
        """(all, AV, HDV) cooperative fractions; NaN for an absent type."""
        coop = self.strategy == COOP
        overall = float(coop.mean())
        av = self.vtype == AV_IDX
        frac_av = float(coop[av].mean()) if av.any() else float("nan")
        frac_hdv = float(coop[~av].mean()) if (~av).any() else float("nan")
        return overall, frac_av, frac_hdv


@dataclass
class StatePool:
    """Per-state payoff tensors for all four type pairs.

    ``active_pay``/``passive_pay`` have shape (n_states, 2, 2, 2, 2) indexed
    by (active type, passive type, active strategy, passive strategy) and
    give the payoff received by that role's player.
    """

    active_pay: np.ndarray
    passive_pay: np.ndarray
    state_ids: list[str] = field(default_factory=list)

    @property
    def n_states(self) -> int:
        return self.active_pay.shape[0]


def pool_from_payoff_rows(rows: list[dict]) -> StatePool:
    """Assemble a pool from canonical payoff rows (see payoffs module).

    Every state needs both roles for all four pairs. The bimatrix is
    rebuilt from each role's (R, S, T, P): the active role's sucker payoff
    sits in the CD cell and its temptation in DC; the passive role swaps
    those cells.
    """
    by_state: dict[str, dict] = {}
    for row in rows:
        by_state.setdefault(row["state_id"], {})[(row["pair"], row["role"])] = row

    state_ids = sorted(by_state, key=lambda sid: (len(sid), sid))
    n = len(state_ids)
    if n == 0:
        raise DataError("payoff table set is empty")
    active_pay = np.zeros((n, 2, 2, 2, 2))
    passive_pay = np.zeros((n, 2, 2, 2, 2))
    for i, sid in enumerate(state_ids):
        entries = by_state[sid]
        for a_type, p_type in ALL_PAIRS:
            pair = f"{a_type}-{p_type}"
            ia = AV_IDX if a_type == "AV" else HDV_IDX
            ip = AV_IDX if p_type == "AV" else HDV_IDX
            for role, tensor in (("active", active_pay), ("passive", passive_pay)):
                row = entries.get((pair, role))
                if row is None:
                    raise DataError(f"state {sid}: missing {role} payoffs for pair {pair}")
                r, s, t, p = row["R"], row["S"], row["T"], row["P"]
                if role == "active":
                    cells = {(COOP, COOP): r, (COOP, DEFECT): s,
                             (DEFECT, COOP): t, (DEFECT, DEFECT): p}
                else:
                    cells = {(COOP, COOP): r, (COOP, DEFECT): t,
                             (DEFECT, COOP): s, (DEFECT, DEFECT): p}
                for (sa, sp), value in cells.items():
                    tensor[i, ia, ip, sa, sp] = value
    return StatePool(active_pay=active_pay, passive_pay=passive_pay,
                     state_ids=state_ids)


def pool_from_canonical(r: float, s: float, t: float, p: float = 0.0) -> StatePool:
    """Single-state pool giving both roles the same (R, S, T, P) in all pairs."""
    active = np.zeros((1, 2, 2, 2, 2))
    passive = np.zeros((1, 2, 2, 2, 2))
    active[0, :, :, COOP, COOP] = r
    active[0, :, :, COOP, DEFECT] = s
    active[0, :, :, DEFECT, COOP] = t
    active[0, :, :, DEFECT, DEFECT] = p
    passive[0, :, :, COOP, COOP] = r
    passive[0, :, :, COOP, DEFECT] = t
    passive[0, :, :, DEFECT, COOP] = s
    passive[0, :, :, DEFECT, DEFECT] = p
    return StatePool(active_pay=active, passive_pay=passive, state_ids=["0"])


# ---------------------------------------------------------------------------
# Grid mechanics

def neighbor_offsets(radius: int) -> list[tuple[int, int]]:
    """Offsets at Manhattan distance 1..radius, excluding the origin."""
    if radius < 1:
        raise DataError("neighborhood radius must be >= 1")
    out = []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            if 0 < abs(dr) + abs(dc) <= radius:
                out.append((dr, dc))
    return out


def neighbors(cell: tuple[int, int], radius: int,
              rows: int = 20, cols: int = 20) -> set[tuple[int, int]]:
    """Toroidal neighbor cells of one lattice site."""
    r0, c0 = cell
    return {((r0 + dr) % rows, (c0 + dc) % cols)
            for dr, dc in neighbor_offsets(radius)}


def _neighbor_index(rows: int, cols: int, radius: int) -> np.ndarray:
    """Flat neighbor indices, shape (cells, n_offsets), toroidal wrap."""
    offsets = neighbor_offsets(radius)
    r = np.repeat(np.arange(rows), cols)
    c = np.tile(np.arange(cols), rows)
    idx = np.empty((rows * cols, len(offsets)), dtype=np.intp)
    for k, (dr, dc) in enumerate(offsets):
        idx[:, k] = ((r + dr) % rows) * cols + (c + dc) % cols
    return idx


def init_grid(config: SimConfig, rng: np.random.Generator) -> GridWorld:
    """Place round(mpr * N) AVs uniformly and draw strategies i.i.d. per type."""
    config.validate()
    n = config.rows * config.cols
    n_av = int(round(config.mpr * n))
    vtype = np.full(n, HDV_IDX, dtype=np.int8)
    vtype[rng.permutation(n)[:n_av]] = AV_IDX
    p_coop = np.where(vtype == AV_IDX, config.init_coop_av, config.init_coop_hdv)
    strategy = np.where(rng.random(n) < p_coop, COOP, DEFECT).astype(np.int8)
    return GridWorld(rows=config.rows, cols=config.cols,
                     strategy=strategy, vtype=vtype)


def play_round(grid: GridWorld, active_pay: np.ndarray, passive_pay: np.ndarray,
               nbr_idx: np.ndarray) -> np.ndarray:
    """Mean payoff per agent over all neighbor games in both roles.

    Each unordered neighbor pair plays twice, swapping roles, so every agent
    receives two payoffs per neighbor; the mean runs over all of them.
    """
    s = grid.strategy
    v = grid.vtype
    t_x = v[:, None]
    t_y = v[nbr_idx]
    s_x = s[:, None]
    s_y = s[nbr_idx]
    a_flat = active_pay.ravel()
    p_flat = passive_pay.ravel()
    code_active = ((t_x * 2 + t_y) * 2 + s_x) * 2 + s_y
    code_passive = ((t_y * 2 + t_x) * 2 + s_y) * 2 + s_x
    received = a_flat[code_active] + p_flat[code_passive]
    return received.sum(axis=1) / (2.0 * nbr_idx.shape[1])


def fermi(e_x, e_y, k: float):
    """Probability of adopting the neighbor's strategy, 1/(1+exp(-(Ey-Ex)/K))."""
    if k <= 0:
        raise DataError("noise parameter must be > 0")
    return expit((np.asarray(e_y, dtype=float) - np.asarray(e_x, dtype=float)) / k)


def step(grid: GridWorld, pool: StatePool, config: SimConfig,
         nbr_idx: np.ndarray, rng: np.random.Generator) -> GridWorld:
    """One synchronous update from a snapshot of the current grid.

    Draws one state uniformly, computes mean payoffs, and lets every agent
    with at least one same-type neighbor imitate a uniformly chosen one with
    Fermi probability; adoptions use pre-update strategies.
    """
    state = int(rng.integers(pool.n_states))
    e_field = play_round(grid, pool.active_pay[state], pool.passive_pay[state],
                         nbr_idx)

    t_y = grid.vtype[nbr_idx]
    same = t_y == grid.vtype[:, None]
    k_same = same.sum(axis=1)

    u_pick = rng.random(grid.n_cells)
    u_adopt = rng.random(grid.n_cells)

    j = np.floor(u_pick * k_same).astype(np.intp)
    j = np.minimum(j, np.maximum(k_same - 1, 0))
    csum = np.cumsum(same, axis=1)
    sel = np.argmax(csum > j[:, None], axis=1)
    chosen = nbr_idx[np.arange(grid.n_cells), sel]

    w = fermi(e_field, e_field[chosen], config.noise_k)
    adopt = (k_same > 0) & (u_adopt < w)
    new_strategy = np.where(adopt, grid.strategy[chosen], grid.strategy).astype(np.int8)
    return GridWorld(rows=grid.rows, cols=grid.cols,
                     strategy=new_strategy, vtype=grid.vtype)


def shuffle_grid(grid: GridWorld, rng: np.random.Generator) -> GridWorld:
    """Uniform random permutation of agents over cells."""
    perm = rng.permutation(grid.n_cells)
    return GridWorld(rows=grid.rows, cols=grid.cols,
                     strategy=grid.strategy[perm], vtype=grid.vtype[perm])


def shuffle_steps(contact_freq: float, steps: int) -> list[int]:
    """1-based step numbers at which the grid is shuffled.

    A frequency f > 0 shuffles every round(1/f) steps, e.g. 0.04 shuffles at
    steps 25, 50, 75, ...
    """
    if contact_freq <= 0:
        return []
    period = int(round(1.0 / contact_freq))
    return list(range(period, steps + 1, period))


def run_single(config: SimConfig, pool: StatePool,
               seed_seq: np.random.SeedSequence) -> np.ndarray:
    """One replication; returns (steps + 1, 3) cooperative fractions."""
    rng = np.random.default_rng(seed_seq)
    grid = init_grid(config, rng)
    nbr_idx = _neighbor_index(config.rows, config.cols, config.neighbor_size)
    shuffles = set(shuffle_steps(config.contact_freq, config.steps))
    series = np.empty((config.steps + 1, 3))
    series[0] = grid.coop_fractions()
    for step_no in range(1, config.steps + 1):
        if step_no in shuffles:
            grid = shuffle_grid(grid, rng)
        grid = step(grid, pool, config, nbr_idx, rng)
        series[step_no] = grid.coop_fractions()
    return series


def run_sweep(configs: list[SimConfig], pool: StatePool,
              master_seed: int = 0) -> list[dict]:
    """Run every config for its replication count with derived seeds.

    Returns one JSON-ready record per config with per-rep series, the
    per-step mean and normal-approximation 95% confidence band, and the
    final-step distribution for box plots.
    """
    if pool.n_states == 0:
        raise NumericError("state pool is empty")
    records = []
    for config_index, config in enumerate(configs):
        config.validate()
        reps = []
        for rep in range(config.reps):
            seq = np.random.SeedSequence([master_seed, config_index, rep])
            reps.append(run_single(config, pool, seq))
        stacked = np.array(reps)                     # (reps, steps+1, 3)
        mean = np.nanmean(stacked, axis=0)
        if config.reps > 1:
            half = 1.96 * np.nanstd(stacked, axis=0, ddof=1) / np.sqrt(config.reps)
        else:
            half = np.zeros_like(mean)
        records.append({
            "config_id": config_index,
            "config": config.to_dict(),
            "master_seed": master_seed,
            "series": [rep.tolist() for rep in stacked],
            "mean": mean.tolist(),
            "ci95_half_width": half.tolist(),
            "final": stacked[:, -1, :].tolist(),
        })
        log.info("config %d done: final mean coop %.3f", config_index,
                 float(mean[-1, 0]))
    return records


def sweep_configs(neighbor_sizes, noise_ks, mprs, contact_freqs,
                  steps: int = 200, reps: int = 20, rows: int = 20,
                  cols: int = 20, init_coop_av: float = 0.51,
                  init_coop_hdv: float = 0.42) -> list[SimConfig]:
    """Cartesian product of sweep axes in a fixed enumeration order."""
    configs = []
    for nb in neighbor_sizes:
        for k in noise_ks:
            for mpr in mprs:
                for cf in contact_freqs:
                    configs.append(SimConfig(
                        rows=rows, cols=cols, mpr=mpr, neighbor_size=nb,
                        noise_k=k, contact_freq=cf, steps=steps, reps=reps,
                        init_coop_av=init_coop_av, init_coop_hdv=init_coop_hdv,
                    ))
    return configs
