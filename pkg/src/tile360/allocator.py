"""Multi-user tile rate allocation under server and per-user capacity limits.

The server picks one encoding-ladder index per visible tile per user so
that the probability-weighted spherical distortion, averaged over users,
is minimal.  Viewport tiles of one user share a single index, marginal
tiles may sit anywhere at or below it, and invisible tiles are pinned to
the lowest index.  The main solver is a steepest-descent search started
from a floored solution of the continuous relaxation; uniform-quality
and viewport-greedy comparators plus an exhaustive reference solver are
included for benchmarking.

Capacity accounting: the feasibility constraints sum rates over visible
tiles only, while the slope denominator tracks the total consumed rate,
whose invisible contribution is constant and cancels in differences.
Results report both tallies.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .geometry import TileGrid, TileSet, tileset_from_members
from .ratedist import RateLadder, RdParams, spherical_mse_to_wspsnr, tile_weight_map
from .visibility import TileClassification, TileVisibility

SEARCH_SPACE_LIMIT = 10_000_000


class InfeasibleProblemError(RuntimeError):
    """Even the minimum-rate vector violates a capacity constraint."""


class RefusedInstanceError(ValueError):
    """Exhaustive enumeration would exceed the configured search budget."""


class DirectionExhausted(ValueError):
    """The addressed element already sits at the top ladder index."""


@dataclass(frozen=True)
class UserSession:
    """One user's classification, capacity and R-D model.

    rd is either a single RdParams applied to every tile or a mapping
    from (row, col) to RdParams covering at least the visible tiles.
    """

    user_id: int
    classification: TileClassification
    capacity: float
    rd: object
    weights: object

    def __post_init__(self):
        if not self.capacity > 0.0:
            raise ValueError("user capacity must be positive")
        grid = self.weights.grid
        cls = self.classification
        covered = cls.viewport_tiles.members | cls.marginal_tiles | cls.invisible_tiles
        if len(covered) != grid.rows * grid.cols:
            raise ValueError("classification does not cover the grid")

    def rd_for(self, m, n):
        if isinstance(self.rd, RdParams):
            return self.rd
        try:
            return self.rd[(m, n)]
        except KeyError:
            raise ValueError(f"no R-D parameters for tile ({m}, {n})") from None


@dataclass(frozen=True)
class AllocationProblem:
    users: tuple
    server_capacity: float
    ladder: RateLadder
    omega: float = 0.0

    def __post_init__(self):
        if not self.users:
            raise ValueError("problem needs at least one user")
        if not self.server_capacity > 0.0:
            raise ValueError("server capacity must be positive")
        if not self.omega >= 0.0:
            raise ValueError("omega must be non-negative")
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ValueError("user ids must be unique")
        grids = {u.weights.grid for u in self.users}
        if len(grids) != 1:
            raise ValueError("all users must share one tile grid")

    @property
    def grid(self):
        return self.users[0].weights.grid


@dataclass(frozen=True)
class RateVector:
    """Per-user grids of 1-based ladder indices, one (rows, cols) array each."""

    indices: tuple

    def __post_init__(self):
        arrays = []
        for arr in self.indices:
            a = np.array(arr, dtype=np.int64)
            a.setflags(write=False)
            arrays.append(a)
        object.__setattr__(self, "indices", tuple(arrays))

    def index(self, user, m, n):
        return int(self.indices[user][m - 1, n - 1])


@dataclass(frozen=True)
class CapacityCheck:
    ok: bool
    limit: float
    consumed: float

    @property
    def slack(self):
        return self.limit - self.consumed


@dataclass(frozen=True)
class CountCheck:
    ok: bool
    violations: int


@dataclass(frozen=True)
class FeasibilityReport:
    server: CapacityCheck
    per_user: tuple
    ladder_membership: CountCheck
    invisible_pinned: CountCheck
    viewport_uniform: CountCheck
    margin_below_viewport: CountCheck

    @property
    def all_ok(self):
        return (
            self.server.ok
            and all(c.ok for c in self.per_user)
            and self.ladder_membership.ok
            and self.invisible_pinned.ok
            and self.viewport_uniform.ok
            and self.margin_below_viewport.ok
        )


@dataclass(frozen=True)
class AllocationResult:
    rates: RateVector
    objective: float
    consumed_visible: float
    consumed_total: float
    per_user_instability: tuple
    per_user_mse: tuple
    per_user_wspsnr: tuple
    iterations: int


@dataclass(frozen=True)
class DescentConditionsReport:
    """Empirical trace of the quality/bandwidth lower hulls per fixed level.

    crossover_bandwidths maps a level pair (u, v) with u < v to the smallest
    consumed rate at which the level-v hull falls to or below the level-u
    hull; hulls maps each level to its list of (consumed rate, objective)
    vertices.
    """

    crossover_holds: bool
    ordering_holds: bool
    crossover_bandwidths: dict
    hulls: dict
    points_evaluated: int


def _fits(consumed, limit):
    return consumed <= limit + 1e-9 * max(1.0, abs(limit))


def _p_total(classification, m, n):
    p = classification.probability(m, n)
    if isinstance(p, TileVisibility):
        return p.p_total
    return float(p)


class _UserWork:
    """Per-user tables shared by all solvers: areas, probabilities and
    distortion evaluated at every ladder rate for every visible tile."""

    def __init__(self, user, ladder):
        self.user = user
        self.vp_tiles = list(user.classification.viewport_tiles.tiles())
        self.mg_tiles = sorted(user.classification.marginal_tiles)
        self.nvp = len(self.vp_tiles)
        self.nmg = len(self.mg_tiles)
        if self.nvp + self.nmg == 0:
            raise ValueError(f"user {user.user_id} has no visible tiles")
        lad = np.asarray(ladder.rates)

        def tables(tiles):
            s = np.array([user.weights.area(m, n) for m, n in tiles])
            p = np.array([_p_total(user.classification, m, n) for m, n in tiles])
            sigma = np.array([user.rd_for(m, n).sigma for m, n in tiles])
            r0 = np.array([user.rd_for(m, n).r0 for m, n in tiles])
            d0 = np.array([user.rd_for(m, n).d0 for m, n in tiles])
            if tiles and np.any(r0 >= lad[0]):
                raise ValueError("lowest ladder rate at or below an R-D pole r0")
            dtab = sigma[None, :] / (lad[:, None] - r0[None, :]) + d0[None, :]
            return s, p, sigma, r0, d0, dtab

        s_vp, p_vp, self.sig_vp, self.r0_vp, self.d0_vp, self.dtab_vp = tables(self.vp_tiles)
        s_mg, p_mg, self.sig_mg, self.r0_mg, self.d0_mg, self.dtab_mg = tables(self.mg_tiles)
        self.sp_vp = s_vp * p_vp
        self.sp_mg = s_mg * p_mg
        self.sum_s = float(s_vp.sum() + s_mg.sum())

    def min_rate_penalty(self, mg_idx):
        """Weighted distortion of the lowest-rate marginal tile.

        When several marginal tiles share the minimum index the tile
        with the smallest weighted distortion stands in: ties leave the
        penalized tile undefined, and taking the cheapest witness keeps
        raising the last low tile always worthwhile, so an all-equal
        margin is never beaten by parking the penalty on a negligible
        tile.
        """
        m = int(np.min(mg_idx))
        tied = np.flatnonzero(mg_idx == m)
        return float(np.min(self.sp_mg[tied] * self.dtab_mg[m - 1, tied]))

    def min_rate_penalty_cont(self, x):
        """Continuous-rate version of min_rate_penalty."""
        m = float(np.min(x))
        tied = np.flatnonzero(x <= m)
        vals = self.sp_mg[tied] * (
            self.sig_mg[tied] / (m - self.r0_mg[tied]) + self.d0_mg[tied]
        )
        return float(np.min(vals))

    def user_q(self, vp_idx, mg_idx, omega):
        """Per-user objective term, already normalized by the visible area."""
        total = 0.0
        if self.nvp:
            total += float(self.sp_vp @ self.dtab_vp[vp_idx - 1])
        if self.nmg:
            cols = np.arange(self.nmg)
            total += float(self.sp_mg @ self.dtab_mg[mg_idx - 1, cols])
            if omega > 0.0:
                total += omega * self.min_rate_penalty(mg_idx)
        return total / self.sum_s

    def user_q_cont(self, v, x, omega):
        """Same term evaluated at continuous rates (v scalar, x per marginal)."""
        total = 0.0
        if self.nvp:
            total += float(np.sum(self.sp_vp * (self.sig_vp / (v - self.r0_vp) + self.d0_vp)))
        if self.nmg:
            total += float(self.sp_mg @ (self.sig_mg / (x - self.r0_mg) + self.d0_mg))
            if omega > 0.0:
                total += omega * self.min_rate_penalty_cont(x)
        return total / self.sum_s

    def visible_cost(self, vp_idx, mg_idx, lad):
        cost = self.nvp * lad[vp_idx - 1] if self.nvp else 0.0
        if self.nmg:
            cost += float(lad[mg_idx - 1].sum())
        return cost


def _build_works(problem):
    return [_UserWork(user, problem.ladder) for user in problem.users]


def _extract_state(problem, rates):
    """Validate the structural invariants and pull out per-user state.

    Returns a list of (viewport index, marginal index array) pairs;
    raises ValueError on any structural violation.
    """
    grid = problem.grid
    big_l = len(problem.ladder)
    if len(rates.indices) != len(problem.users):
        raise ValueError("rate vector user count does not match the problem")
    states = []
    for user, arr in zip(problem.users, rates.indices):
        if arr.shape != (grid.rows, grid.cols):
            raise ValueError("rate grid shape does not match the tile grid")
        if arr.min() < 1 or arr.max() > big_l:
            raise ValueError("ladder index outside [1, L]")
        cls = user.classification
        vp = list(cls.viewport_tiles.tiles())
        mg = sorted(cls.marginal_tiles)
        vp_vals = [int(arr[m - 1, n - 1]) for m, n in vp]
        mg_vals = np.array([int(arr[m - 1, n - 1]) for m, n in mg], dtype=np.int64)
        for m, n in cls.invisible_tiles:
            if arr[m - 1, n - 1] != 1:
                raise ValueError(f"invisible tile ({m}, {n}) not at the lowest index")
        if vp_vals and len(set(vp_vals)) != 1:
            raise ValueError("viewport tiles do not share one index")
        vp_idx = vp_vals[0] if vp_vals else 1
        if vp_vals and mg_vals.size and mg_vals.max() > vp_idx:
            raise ValueError("marginal tile above the viewport index")
        states.append((vp_idx, mg_vals))
    return states


def _state_grids(problem, works, states):
    grid = problem.grid
    grids = []
    for w, (vp_idx, mg_idx) in zip(works, states):
        arr = np.ones((grid.rows, grid.cols), dtype=np.int64)
        for m, n in w.vp_tiles:
            arr[m - 1, n - 1] = vp_idx
        for (m, n), idx in zip(w.mg_tiles, mg_idx):
            arr[m - 1, n - 1] = idx
        grids.append(arr)
    return RateVector(tuple(grids))


def _population_std(values):
    return float(np.std(np.asarray(values, dtype=float)))


def _finalize(problem, works, states, iterations):
    lad = np.asarray(problem.ladder.rates)
    grid = problem.grid
    tiles_total = grid.rows * grid.cols
    consumed_visible = 0.0
    consumed_total = 0.0
    q_sum = 0.0
    instability = []
    mses = []
    psnrs = []
    for w, (vp_idx, mg_idx) in zip(works, states):
        cost = w.visible_cost(vp_idx, mg_idx, lad)
        consumed_visible += cost
        consumed_total += cost + (tiles_total - w.nvp - w.nmg) * lad[0]
        q_sum += w.user_q(vp_idx, mg_idx, problem.omega)
        mse = w.user_q(vp_idx, mg_idx, 0.0)
        mses.append(mse)
        psnrs.append(spherical_mse_to_wspsnr(mse) if mse > 0.0 else math.inf)
        indices = [vp_idx] * w.nvp + [int(i) for i in mg_idx]
        instability.append(_population_std(indices))
    return AllocationResult(
        rates=_state_grids(problem, works, states),
        objective=q_sum / len(works),
        consumed_visible=consumed_visible,
        consumed_total=consumed_total,
        per_user_instability=tuple(instability),
        per_user_mse=tuple(mses),
        per_user_wspsnr=tuple(psnrs),
        iterations=iterations,
    )


def objective(problem, rates):
    """Probability-weighted spherical distortion averaged over users."""
    works = _build_works(problem)
    states = _extract_state(problem, rates)
    total = 0.0
    for w, (vp_idx, mg_idx) in zip(works, states):
        total += w.user_q(vp_idx, mg_idx, problem.omega)
    return total / len(works)


def continuous_objective(problem, cont_rates):
    """Objective evaluated at continuous per-tile rates (same layout as
    RateVector but holding rate values instead of ladder indices)."""
    works = _build_works(problem)
    total = 0.0
    for w, arr in zip(works, cont_rates):
        arr = np.asarray(arr, dtype=float)
        if w.nvp:
            vals = [arr[m - 1, n - 1] for m, n in w.vp_tiles]
            if max(vals) - min(vals) > 1e-6:
                raise ValueError("viewport tiles do not share one rate")
            v = float(np.mean(vals))
        else:
            v = problem.ladder.rates[0]
        x = np.array([arr[m - 1, n - 1] for m, n in w.mg_tiles])
        total += w.user_q_cont(v, x, problem.omega)
    return total / len(works)


def check_feasible(problem, rates):
    """Per-constraint verdict for a candidate rate vector.

    Capacity tallies sum the visible tiles only; structural checks count
    violating entries.  Out-of-range indices are clipped for the tally
    and flagged by the ladder-membership check.
    """
    grid = problem.grid
    lad = np.asarray(problem.ladder.rates)
    big_l = len(problem.ladder)
    if len(rates.indices) != len(problem.users):
        raise ValueError("rate vector user count does not match the problem")
    ladder_bad = 0
    invisible_bad = 0
    viewport_bad = 0
    margin_bad = 0
    per_user = []
    server_sum = 0.0
    for user, arr in zip(problem.users, rates.indices):
        if arr.shape != (grid.rows, grid.cols):
            raise ValueError("rate grid shape does not match the tile grid")
        ladder_bad += int(np.sum((arr < 1) | (arr > big_l)))
        clipped = np.clip(arr, 1, big_l)
        cls = user.classification
        vp = list(cls.viewport_tiles.tiles())
        vp_vals = [int(clipped[m - 1, n - 1]) for m, n in vp]
        consumed = sum(lad[v - 1] for v in vp_vals)
        viewport_bad += len(set(vp_vals)) - 1 if vp_vals else 0
        for m, n in sorted(cls.marginal_tiles):
            idx = int(clipped[m - 1, n - 1])
            consumed += lad[idx - 1]
            if vp_vals and idx > min(vp_vals):
                margin_bad += 1
        for m, n in cls.invisible_tiles:
            if arr[m - 1, n - 1] != 1:
                invisible_bad += 1
        per_user.append(CapacityCheck(_fits(consumed, user.capacity), user.capacity, consumed))
        server_sum += consumed
    return FeasibilityReport(
        server=CapacityCheck(_fits(server_sum, problem.server_capacity), problem.server_capacity, server_sum),
        per_user=tuple(per_user),
        ladder_membership=CountCheck(ladder_bad == 0, ladder_bad),
        invisible_pinned=CountCheck(invisible_bad == 0, invisible_bad),
        viewport_uniform=CountCheck(viewport_bad == 0, viewport_bad),
        margin_below_viewport=CountCheck(margin_bad == 0, margin_bad),
    )


def slope(problem, rates, direction):
    """Distortion drop per extra kbps for one ladder step in a direction.

    direction is (user position, row, col).  A viewport direction bumps
    the user's whole viewport group in both the quality and the rate
    difference; a marginal direction bumps that tile alone.
    """
    user_pos, m, n = direction
    works = _build_works(problem)
    states = _extract_state(problem, rates)
    if not 0 <= user_pos < len(works):
        raise ValueError(f"no user at position {user_pos}")
    w = works[user_pos]
    vp_idx, mg_idx = states[user_pos]
    lad = np.asarray(problem.ladder.rates)
    big_l = len(problem.ladder)
    k = len(works)
    if (m, n) in w.user.classification.viewport_tiles:
        if vp_idx >= big_l:
            raise DirectionExhausted(f"viewport of user {user_pos} already at the top index")
        dq = (w.user_q(vp_idx + 1, mg_idx, problem.omega) - w.user_q(vp_idx, mg_idx, problem.omega)) / k
        db = w.nvp * (lad[vp_idx] - lad[vp_idx - 1])
    elif (m, n) in w.user.classification.marginal_tiles:
        pos = w.mg_tiles.index((m, n))
        idx = int(mg_idx[pos])
        if idx >= big_l:
            raise DirectionExhausted(f"tile ({m}, {n}) already at the top index")
        bumped = mg_idx.copy()
        bumped[pos] = idx + 1
        dq = (w.user_q(vp_idx, bumped, problem.omega) - w.user_q(vp_idx, mg_idx, problem.omega)) / k
        db = lad[idx] - lad[idx - 1]
    else:
        raise ValueError(f"tile ({m}, {n}) is not visible for user {user_pos}")
    return -dq / db


def _check_min_point(problem, works):
    lad = problem.ladder.rates
    total = 0.0
    for w in works:
        cost = (w.nvp + w.nmg) * lad[0]
        if not _fits(cost, w.user.capacity):
            raise InfeasibleProblemError(
                f"user {w.user.user_id} cannot carry its visible tiles at the lowest rate"
            )
        total += cost
    if not _fits(total, problem.server_capacity):
        raise InfeasibleProblemError("server capacity below the minimum-rate demand")


def _relaxation_state(problem, iterations):
    """Projected-subgradient solve of the box-relaxed problem.

    Ladder membership is relaxed to the interval [R_1, R_L]; variables
    collapse to one viewport rate per user, one rate per marginal tile
    and one epigraph variable held at the running minimum marginal rate.
    All users are stacked into flat arrays so the projection bisections
    run vectorized.  Returns the best feasible iterate as per-user
    (v, x) pairs.
    """
    works = _build_works(problem)
    _check_min_point(problem, works)
    r_lo = problem.ladder.rates[0]
    r_hi = problem.ladder.rates[-1]
    span = r_hi - r_lo
    omega = problem.omega
    k = len(works)
    caps = np.array([w.user.capacity for w in works])
    nvp = np.array([w.nvp for w in works], dtype=float)
    sum_s = np.array([w.sum_s for w in works])
    base_user = (nvp + np.array([w.nmg for w in works])) * r_lo
    server_cap = problem.server_capacity

    user_vp = np.concatenate([np.full(w.nvp, i, dtype=np.int64) for i, w in enumerate(works)] or [np.zeros(0, np.int64)])
    sp_vp = np.concatenate([w.sp_vp for w in works])
    sig_vp = np.concatenate([w.sig_vp for w in works])
    r0_vp = np.concatenate([w.r0_vp for w in works])
    d0_vp = np.concatenate([w.d0_vp for w in works])
    user_x = np.concatenate([np.full(w.nmg, i, dtype=np.int64) for i, w in enumerate(works)] or [np.zeros(0, np.int64)])
    sp_mg = np.concatenate([w.sp_mg for w in works])
    sig_mg = np.concatenate([w.sig_mg for w in works])
    r0_mg = np.concatenate([w.r0_mg for w in works])
    d0_mg = np.concatenate([w.d0_mg for w in works])
    has_vp_x = nvp[user_x] > 0

    fair = np.minimum(r_hi, np.maximum(r_lo, caps / np.maximum(nvp + np.bincount(user_x, minlength=k), 1.0)))
    v = fair.copy()
    x = fair[user_x].copy()
    t = fair.copy()

    def seg_min(values):
        out = np.full(k, np.inf)
        np.minimum.at(out, user_x, values)
        return out

    def argmin_pos():
        """Cheapest-witness position of each user's minimum marginal rate.

        Among the tiles tied at a user's lowest marginal rate, the one
        with the smallest weighted distortion hosts the penalty term
        (same tie rule as _UserWork.min_rate_penalty).
        """
        mins = seg_min(x)
        hit = x <= mins[user_x]
        vals = np.where(hit, sp_mg * (sig_mg / (x - r0_mg) + d0_mg), np.inf)
        best = np.full(k, np.inf)
        np.minimum.at(best, user_x, vals)
        attain = vals <= best[user_x]
        users_hit, first = np.unique(user_x[attain], return_index=True)
        return users_hit, np.flatnonzero(attain)[first]

    def demands(vv, xx):
        return nvp * vv + np.bincount(user_x, weights=xx, minlength=k)

    def project():
        nonlocal v, x, t
        np.clip(v, r_lo, r_hi, out=v)
        np.clip(x, r_lo, r_hi, out=x)
        np.clip(t, r_lo, r_hi, out=t)
        np.minimum(x, np.where(has_vp_x, v[user_x], r_hi), out=x)
        if omega > 0.0 and user_x.size:
            # one pooled-average step of projecting (x, t) onto t <= x_j,
            # so the epigraph variable can push the lowest marginal rates up
            below = x < t[user_x]
            if below.any():
                sums = np.bincount(user_x, weights=np.where(below, x, 0.0), minlength=k)
                cnts = np.bincount(user_x, weights=below.astype(float), minlength=k)
                pooled = np.where(cnts > 0.0, (t + sums) / (1.0 + cnts), t)
                x = np.where(below, np.maximum(x, pooled[user_x]), x)
                t = pooled
                np.minimum(x, np.where(has_vp_x, v[user_x], r_hi), out=x)
        d = demands(v, x)
        viol = d > caps * (1.0 + 1e-12)
        if viol.any():
            lam_lo = np.zeros(k)
            lam_hi = np.where(viol, span, 0.0)
            for _ in range(26):
                mid = 0.5 * (lam_lo + lam_hi)
                vv = np.clip(v - mid * nvp, r_lo, r_hi)
                xx = np.clip(x - mid[user_x], r_lo, r_hi)
                over = demands(vv, xx) > caps
                lam_lo = np.where(over, mid, lam_lo)
                lam_hi = np.where(over, lam_hi, mid)
            v = np.clip(v - lam_hi * nvp, r_lo, r_hi)
            x = np.clip(x - lam_hi[user_x], r_lo, r_hi)
        total = demands(v, x).sum()
        if total > server_cap * (1.0 + 1e-12):
            lo, hi = 0.0, span
            for _ in range(26):
                mid = 0.5 * (lo + hi)
                vv = np.clip(v - mid * nvp, r_lo, r_hi)
                xx = np.clip(x - mid, r_lo, r_hi)
                if demands(vv, xx).sum() > server_cap:
                    lo = mid
                else:
                    hi = mid
            v = np.clip(v - hi * nvp, r_lo, r_hi)
            x = np.clip(x - hi, r_lo, r_hi)
        np.minimum(x, np.where(has_vp_x, v[user_x], r_hi), out=x)
        # exact pull toward the minimum point for any residual violation
        d = demands(v, x)
        bad = d > caps
        if bad.any():
            s = np.where(bad & (d > base_user), np.maximum(0.0, (caps - base_user) / np.maximum(d - base_user, 1e-300)), 1.0)
            s = np.minimum(s, 1.0)
            v = r_lo + s * (v - r_lo)
            x = r_lo + s[user_x] * (x - r_lo)
        total = demands(v, x).sum()
        base_total = base_user.sum()
        if total > server_cap and total > base_total:
            s = max(0.0, (server_cap - base_total) / (total - base_total))
            v = r_lo + s * (v - r_lo)
            x = r_lo + s * (x - r_lo)
        t = np.clip(np.minimum(t, seg_min(x)), r_lo, r_hi)

    def exact_q():
        per_user = np.zeros(k)
        if user_vp.size:
            per_user += np.bincount(user_vp, weights=sp_vp * (sig_vp / (v[user_vp] - r0_vp) + d0_vp), minlength=k)
        if user_x.size:
            per_user += np.bincount(user_x, weights=sp_mg * (sig_mg / (x - r0_mg) + d0_mg), minlength=k)
            if omega > 0.0:
                users_hit, pos = argmin_pos()
                per_user[users_hit] += omega * sp_mg[pos] * (sig_mg[pos] / (x[pos] - r0_mg[pos]) + d0_mg[pos])
        return float((per_user / sum_s).sum()) / k

    project()
    best_q = exact_q()
    best = (v.copy(), x.copy())
    step0 = 0.25 * span
    # step size halves every tenth of the run: diminishing, with a fine
    # final resolution of about step0 / 512
    stage = max(1, iterations // 10)
    for it in range(iterations):
        g_v = np.zeros(k)
        if user_vp.size:
            g_v = np.bincount(user_vp, weights=sp_vp * (-sig_vp / (v[user_vp] - r0_vp) ** 2), minlength=k)
        g_v /= k * sum_s
        g_x = sp_mg * (-sig_mg / (x - r0_mg) ** 2) / (k * sum_s[user_x]) if user_x.size else np.zeros(0)
        g_t = np.zeros(k)
        if omega > 0.0 and user_x.size:
            users_hit, pos = argmin_pos()
            g_t[users_hit] = omega * sp_mg[pos] * (-sig_mg[pos] / (t[users_hit] - r0_mg[pos]) ** 2) / (k * sum_s[users_hit])
        scale = max(
            float(np.max(np.abs(g_v), initial=0.0)),
            float(np.max(np.abs(g_x), initial=0.0)),
            float(np.max(np.abs(g_t), initial=0.0)),
        )
        if scale <= 0.0:
            break
        eta = step0 * 0.5 ** (it // stage)
        v = v - eta * g_v / scale
        x = x - eta * g_x / scale
        t = t - eta * g_t / scale
        project()
        q = exact_q()
        if q < best_q:
            best_q = q
            best = (v.copy(), x.copy())
    v, x = best
    state = []
    offset = 0
    for i, w in enumerate(works):
        state.append((float(v[i]) if w.nvp else r_lo, x[offset : offset + w.nmg].copy()))
        offset += w.nmg
    return works, state


def solve_relaxation(problem, iterations=600):
    """Continuous rates solving the interval-relaxed problem.

    Returns one (rows, cols) float array per user; invisible tiles hold
    the lowest ladder rate.  The point is the best feasible iterate of a
    projected-subgradient run with diminishing steps.
    """
    works, state = _relaxation_state(problem, iterations)
    grid = problem.grid
    out = []
    for w, (vv, x) in zip(works, state):
        arr = np.full((grid.rows, grid.cols), problem.ladder.rates[0], dtype=float)
        for m, n in w.vp_tiles:
            arr[m - 1, n - 1] = vv
        for (m, n), val in zip(w.mg_tiles, x):
            arr[m - 1, n - 1] = val
        out.append(arr)
    return tuple(out)


def floor_to_ladder(cont_rates, ladder, problem=None):
    """Map continuous rates down to the nearest ladder member.

    Values get a 1e-9 absolute snap so a rate infinitesimally below a
    ladder member still lands on it.  With a problem given, viewport
    groups take their common floored index and marginal tiles are
    clamped below it.
    """
    lad = ladder.rates
    grids = []
    for arr in cont_rates:
        arr = np.asarray(arr, dtype=float)
        assert np.all(arr >= lad[0] - 1e-9), "continuous rate below the lowest ladder rate"
        idx = np.empty(arr.shape, dtype=np.int64)
        flat = arr.ravel()
        out = idx.ravel()
        for i, val in enumerate(flat):
            out[i] = ladder.floor_index(min(val + 1e-9, lad[-1]))
        grids.append(idx)
    if problem is not None:
        for user, idx in zip(problem.users, grids):
            cls = user.classification
            vp = list(cls.viewport_tiles.tiles())
            if vp:
                group = min(idx[m - 1, n - 1] for m, n in vp)
                for m, n in vp:
                    idx[m - 1, n - 1] = group
                for m, n in cls.marginal_tiles:
                    idx[m - 1, n - 1] = min(idx[m - 1, n - 1], group)
            for m, n in cls.invisible_tiles:
                idx[m - 1, n - 1] = 1
    return RateVector(tuple(grids))


class _DescentState:
    """Mutable per-user search state for the steepest-descent loop."""

    def __init__(self, work, vp_idx, mg_idx, ladder_len):
        self.work = work
        self.vp_idx = vp_idx
        self.mg_idx = mg_idx
        combined = [(t, True, -1) for t in work.vp_tiles] + [
            (t, False, i) for i, t in enumerate(work.mg_tiles)
        ]
        combined.sort(key=lambda entry: entry[0])
        self.tiles = [entry[0] for entry in combined]
        self.is_vp = np.array([entry[1] for entry in combined], dtype=bool)
        self.mg_pos = np.array([entry[2] for entry in combined], dtype=np.int64)
        self.active = np.zeros(len(combined), dtype=bool)
        self.slopes = np.full(len(combined), -np.inf)
        self.big_l = ladder_len
        self.pos_of_mg = np.full(work.nmg, -1, dtype=np.int64)
        for pos, entry in enumerate(combined):
            if not entry[1]:
                self.pos_of_mg[entry[2]] = pos
        # marginal directions held back only by the margin <= viewport
        # constraint; they rejoin the active set when the viewport rises
        self.mg_vp_blocked = np.zeros(work.nmg, dtype=bool)


def _refresh_slopes(state, lad, omega, n_users):
    """Recompute cached slopes for one user and drop exhausted directions."""
    w = state.work
    if w.nvp:
        if state.vp_idx >= state.big_l:
            state.active[state.is_vp] = False
            s_vp = -np.inf
        else:
            dq = float(w.sp_vp @ (w.dtab_vp[state.vp_idx] - w.dtab_vp[state.vp_idx - 1]))
            db = w.nvp * (lad[state.vp_idx] - lad[state.vp_idx - 1])
            s_vp = -dq / (w.sum_s * n_users * db)
        state.slopes[state.is_vp] = s_vp
    if w.nmg:
        mg_idx = state.mg_idx
        base_term = omega * w.min_rate_penalty(mg_idx) if omega > 0.0 else 0.0
        s_mg = np.full(w.nmg, -np.inf)
        for i in range(w.nmg):
            idx = int(mg_idx[i])
            if idx >= state.big_l:
                continue
            dq = w.sp_mg[i] * (w.dtab_mg[idx, i] - w.dtab_mg[idx - 1, i])
            if omega > 0.0:
                bumped = mg_idx.copy()
                bumped[i] = idx + 1
                dq += omega * w.min_rate_penalty(bumped) - base_term
            db = lad[idx] - lad[idx - 1]
            s_mg[i] = -dq / (w.sum_s * n_users * db)
        mask = ~state.is_vp
        state.slopes[mask] = s_mg[state.mg_pos[mask]]
        exhausted = mask.copy()
        exhausted[mask] = mg_idx[state.mg_pos[mask]] >= state.big_l
        state.active[exhausted] = False


def steepest_descent(problem, init="relaxation", relaxation_iterations=600):
    """Discrete allocation by steepest slope ascent in consumed rate.

    Starts from the floored continuous relaxation (init="relaxation") or
    from the all-minimum vector (init="all_min"); repeatedly bumps the
    direction with the largest distortion-per-kbps slope, removing a
    direction from the active set when its bump would break a
    constraint, until the set empties.  A viewport direction bumps the
    whole viewport group of its user.
    """
    if init not in ("relaxation", "all_min"):
        raise ValueError(f"unknown init {init!r}")
    if init == "relaxation":
        works, relaxed = _relaxation_state(problem, relaxation_iterations)
    else:
        works = _build_works(problem)
        _check_min_point(problem, works)
        relaxed = None

    lad = np.asarray(problem.ladder.rates)
    big_l = len(problem.ladder)
    k = len(works)
    omega = problem.omega
    states = []
    for i, w in enumerate(works):
        if relaxed is None:
            states.append(_DescentState(w, 1, np.ones(w.nmg, dtype=np.int64), big_l))
            continue
        vv, x = relaxed[i]
        vp_idx = problem.ladder.floor_index(min(vv + 1e-9, lad[-1])) if w.nvp else 1
        mg_idx = np.array(
            [problem.ladder.floor_index(min(val + 1e-9, lad[-1])) for val in x],
            dtype=np.int64,
        )
        if w.nvp:
            mg_idx = np.minimum(mg_idx, vp_idx)
        states.append(_DescentState(w, vp_idx, mg_idx, big_l))

    consumed = [w.visible_cost(s.vp_idx, s.mg_idx, lad) for w, s in zip(works, states)]
    total = sum(consumed)

    # Active set: directions whose bump keeps every constraint satisfied
    # at the starting point.  Capacity exclusions are final because
    # consumption only grows; a marginal held back by the margin <=
    # viewport constraint is re-admitted when its viewport rises.
    for i, (w, s) in enumerate(zip(works, states)):
        cap = w.user.capacity
        if w.nvp and s.vp_idx < big_l:
            delta = w.nvp * (lad[s.vp_idx] - lad[s.vp_idx - 1])
            ok = _fits(consumed[i] + delta, cap) and _fits(total + delta, problem.server_capacity)
            s.active[s.is_vp] = ok
        for j in range(w.nmg):
            idx = int(s.mg_idx[j])
            if idx >= big_l:
                continue
            if w.nvp and idx + 1 > s.vp_idx:
                s.mg_vp_blocked[j] = True
                continue
            delta = lad[idx] - lad[idx - 1]
            if _fits(consumed[i] + delta, cap) and _fits(total + delta, problem.server_capacity):
                s.active[s.pos_of_mg[j]] = True
        _refresh_slopes(s, lad, omega, k)

    max_loops = sum((w.nvp + w.nmg) for w in works) * 2 * (big_l + 1) + 10
    iterations = 0
    while True:
        best_val = -np.inf
        best_user = -1
        best_pos = -1
        for i, s in enumerate(states):
            if not s.active.any():
                continue
            masked = np.where(s.active, s.slopes, -np.inf)
            pos = int(np.argmax(masked))
            if masked[pos] > best_val:
                best_val = masked[pos]
                best_user = i
                best_pos = pos
        if best_user < 0:
            break
        if best_val < 0.0:
            # A bump can raise the objective only through the min-rate
            # penalty switching its argmin tile; never take such steps.
            break
        iterations += 1
        if iterations > max_loops:
            raise RuntimeError("steepest descent failed to terminate")
        s = states[best_user]
        w = works[best_user]
        cap = w.user.capacity
        if s.is_vp[best_pos]:
            delta = w.nvp * (lad[s.vp_idx] - lad[s.vp_idx - 1])
            if _fits(consumed[best_user] + delta, cap) and _fits(total + delta, problem.server_capacity):
                s.vp_idx += 1
                consumed[best_user] += delta
                total += delta
                for j in range(w.nmg):
                    if s.mg_vp_blocked[j] and s.mg_idx[j] < big_l and s.mg_idx[j] + 1 <= s.vp_idx:
                        s.mg_vp_blocked[j] = False
                        s.active[s.pos_of_mg[j]] = True
                _refresh_slopes(s, lad, omega, k)
            else:
                s.active[best_pos] = False
        else:
            j = int(s.mg_pos[best_pos])
            idx = int(s.mg_idx[j])
            delta = lad[idx] - lad[idx - 1]
            legal = (not w.nvp) or (idx + 1 <= s.vp_idx)
            if legal and _fits(consumed[best_user] + delta, cap) and _fits(total + delta, problem.server_capacity):
                s.mg_idx[j] = idx + 1
                consumed[best_user] += delta
                total += delta
                _refresh_slopes(s, lad, omega, k)
            else:
                s.active[best_pos] = False
                if not legal:
                    s.mg_vp_blocked[j] = True
    final = [(s.vp_idx, s.mg_idx) for s in states]
    return _finalize(problem, works, final, iterations)


def search_space_size(problem):
    """Number of structurally valid rate vectors (capacities ignored)."""
    big_l = len(problem.ladder)
    works = _build_works(problem)
    card = 1
    for w in works:
        if w.nvp:
            card *= sum(u**w.nmg for u in range(1, big_l + 1))
        else:
            card *= big_l**w.nmg if w.nmg else 1
    return card


def global_search(problem):
    """Exhaustive minimum over all structurally valid rate vectors."""
    card = search_space_size(problem)
    if card > SEARCH_SPACE_LIMIT:
        raise RefusedInstanceError(
            f"search space holds {card} vectors, above the {SEARCH_SPACE_LIMIT} limit"
        )
    works = _build_works(problem)
    lad = np.asarray(problem.ladder.rates)
    big_l = len(problem.ladder)
    omega = problem.omega
    user_cands = []
    for w in works:
        cands = []
        vp_range = range(1, big_l + 1) if w.nvp else (1,)
        for u in vp_range:
            top = u if w.nvp else big_l
            for combo in itertools.product(range(1, top + 1), repeat=w.nmg):
                mg_idx = np.array(combo, dtype=np.int64)
                cost = w.visible_cost(u, mg_idx, lad)
                if not _fits(cost, w.user.capacity):
                    continue
                cands.append((cost, w.user_q(u, mg_idx, omega), u, mg_idx))
        if not cands:
            raise InfeasibleProblemError(
                f"user {w.user.user_id} cannot carry its visible tiles at the lowest rate"
            )
        user_cands.append(cands)

    n = len(user_cands)
    suffix_cost = [0.0] * (n + 1)
    suffix_q = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_cost[i] = suffix_cost[i + 1] + min(c[0] for c in user_cands[i])
        suffix_q[i] = suffix_q[i + 1] + min(c[1] for c in user_cands[i])

    best_q = math.inf
    best_states = None
    leaves = 0
    chosen = [None] * n

    def recurse(i, cost_so_far, q_so_far):
        nonlocal best_q, best_states, leaves
        if not _fits(cost_so_far + suffix_cost[i], problem.server_capacity):
            return
        if q_so_far + suffix_q[i] >= best_q:
            return
        if i == n:
            leaves += 1
            best_q = q_so_far
            best_states = [(u, mg.copy()) for _, _, u, mg in chosen]
            return
        for cand in user_cands[i]:
            chosen[i] = cand
            recurse(i + 1, cost_so_far + cand[0], q_so_far + cand[1])

    recurse(0, 0.0, 0.0)
    if best_states is None:
        raise InfeasibleProblemError("server capacity below the minimum-rate demand")
    return _finalize(problem, works, best_states, leaves)


def _step_down(levels, demand_at, server_capacity):
    """Decrement the highest level (ties: lowest user) until the shared
    capacity holds; returns the number of decrements taken."""
    steps = 0
    while not _fits(sum(demand_at(i, levels[i]) for i in range(len(levels))), server_capacity):
        top = max(levels)
        if top <= 1:
            raise InfeasibleProblemError("server capacity below the minimum-rate demand")
        pick = levels.index(top)
        levels[pick] -= 1
        steps += 1
    return steps


def baseline_alloc(problem):
    """Uniform-quality comparator: every tile of a user at one index.

    The level is the largest single index whose uniform all-tile demand
    fits the user link, stepped down one user at a time if the server
    link binds.  The returned vector is normalized to the structural
    form (invisible tiles at the lowest index), so its reported tallies
    count visible tiles like every other solver.
    """
    works = _build_works(problem)
    lad = problem.ladder.rates
    big_l = len(problem.ladder)
    grid = problem.grid
    tiles_total = grid.rows * grid.cols
    levels = []
    for w in works:
        level = 0
        for u in range(1, big_l + 1):
            if _fits(tiles_total * lad[u - 1], w.user.capacity):
                level = u
        if level == 0:
            raise InfeasibleProblemError(
                f"user {w.user.user_id} cannot carry the full grid at the lowest rate"
            )
        levels.append(level)
    steps = _step_down(levels, lambda i, u: tiles_total * lad[u - 1], problem.server_capacity)
    states = [(lv, np.full(w.nmg, lv, dtype=np.int64)) for w, lv in zip(works, levels)]
    return _finalize(problem, works, states, steps)


def greedy_alloc(problem):
    """Viewport-first comparator: the viewport group takes the largest
    common index that fits with every other tile at the lowest rate."""
    works = _build_works(problem)
    lad = problem.ladder.rates
    big_l = len(problem.ladder)
    grid = problem.grid
    tiles_total = grid.rows * grid.cols

    def demand(w, u):
        return w.nvp * lad[u - 1] + (tiles_total - w.nvp) * lad[0]

    levels = []
    for w in works:
        level = 0
        for u in range(1, big_l + 1):
            if _fits(demand(w, u), w.user.capacity):
                level = u
        if level == 0:
            raise InfeasibleProblemError(
                f"user {w.user.user_id} cannot carry the full grid at the lowest rate"
            )
        levels.append(level if w.nvp else 1)
    steps = _step_down(levels, lambda i, u: demand(works[i], u), problem.server_capacity)
    states = [(lv, np.ones(w.nmg, dtype=np.int64)) for w, lv in zip(works, levels)]
    return _finalize(problem, works, states, steps)


def instability_index(problem, rates, user):
    """Population standard deviation of the visible-tile ladder indices."""
    states = _extract_state(problem, rates)
    if not 0 <= user < len(states):
        raise ValueError(f"no user at position {user}")
    vp_idx, mg_idx = states[user]
    nvp = len(problem.users[user].classification.viewport_tiles)
    indices = [vp_idx] * nvp + [int(i) for i in mg_idx]
    if not indices:
        raise ValueError("user has no visible tiles")
    return _population_std(indices)


def _lower_hull(points):
    """Lower convex hull vertices of (x, y) points, x ascending."""
    pts = sorted(points)
    dedup = []
    for x, y in pts:
        if dedup and dedup[-1][0] == x:
            if y < dedup[-1][1]:
                dedup[-1] = (x, y)
            continue
        dedup.append((x, y))
    hull = []
    for p in dedup:
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0.0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def _hull_value(hull, x):
    """Hull height at budget x: flat beyond the last point, nan below the first.

    A budget larger than the dearest achievable point can always be
    under-spent, so the envelope stays at its minimum; below the cheapest
    point no allocation exists.
    """
    xs = [p[0] for p in hull]
    ys = [p[1] for p in hull]
    if x < xs[0]:
        return math.nan
    if x > xs[-1]:
        return ys[-1]
    return float(np.interp(x, xs, ys))


def verify_descent_conditions(problem, direction, budget=2_000_000):
    """Empirical check of the hull conditions behind the descent search.

    Fixes the addressed element to each ladder level in turn, enumerates
    every structurally valid completion (capacities ignored), and traces
    the lower convex hull of (consumed total rate, objective) per level.
    Reports whether higher levels dominate beyond a cross-over bandwidth
    and whether adjacent cross-over bandwidths are non-decreasing.
    """
    user_pos, m, n = direction
    works = _build_works(problem)
    if isinstance(user_pos, str):
        ids = [w.user.user_id for w in works]
        if user_pos not in ids:
            raise ValueError(f"no user with id {user_pos!r}")
        user_pos = ids.index(user_pos)
    if not 0 <= user_pos < len(works):
        raise ValueError(f"no user at position {user_pos}")
    target = works[user_pos]
    if (m, n) in target.user.classification.viewport_tiles:
        kind = "vp"
        mg_fixed = -1
    elif (m, n) in target.user.classification.marginal_tiles:
        kind = "mg"
        mg_fixed = target.mg_tiles.index((m, n))
    else:
        raise ValueError(f"tile ({m}, {n}) is not visible for user {user_pos}")

    lad = np.asarray(problem.ladder.rates)
    big_l = len(problem.ladder)
    omega = problem.omega
    grid = problem.grid
    tiles_total = grid.rows * grid.cols
    invisible_const = sum((tiles_total - w.nvp - w.nmg) * lad[0] for w in works)

    def candidates(w, pin_level=None):
        out_cost = []
        out_q = []
        if w is target and kind == "vp":
            vp_range = (pin_level,)
        else:
            vp_range = range(1, big_l + 1) if w.nvp else (1,)
        for u in vp_range:
            if w is target and kind == "mg":
                if w.nvp and pin_level > u:
                    continue
                axes = [
                    (pin_level,) if i == mg_fixed else range(1, (u if w.nvp else big_l) + 1)
                    for i in range(w.nmg)
                ]
            else:
                top = u if w.nvp else big_l
                axes = [range(1, top + 1)] * w.nmg
            for combo in itertools.product(*axes):
                mg_idx = np.array(combo, dtype=np.int64)
                out_cost.append(w.visible_cost(u, mg_idx, lad))
                out_q.append(w.user_q(u, mg_idx, omega))
        return np.asarray(out_cost), np.asarray(out_q)

    def count_target(pin):
        if kind == "vp":
            return pin**target.nmg
        if target.nvp:
            return sum(u ** (target.nmg - 1) for u in range(pin, big_l + 1))
        return big_l ** (target.nmg - 1)

    others_count = 1
    for w in works:
        if w is target:
            continue
        if w.nvp:
            others_count *= sum(u**w.nmg for u in range(1, big_l + 1))
        else:
            others_count *= big_l**w.nmg if w.nmg else 1
    total_points = sum(count_target(u) * others_count for u in range(1, big_l + 1))
    if total_points > budget:
        raise RefusedInstanceError(
            f"hull enumeration needs {total_points} points, above the {budget} budget"
        )

    other_tables = [candidates(w) for w in works if w is not target]
    hulls = {}
    for u in range(1, big_l + 1):
        cost, q = candidates(target, u)
        if cost.size == 0:
            continue
        b_arr = cost.copy()
        q_arr = q.copy()
        for oc, oq in other_tables:
            b_arr = np.add.outer(b_arr, oc).ravel()
            q_arr = np.add.outer(q_arr, oq).ravel()
        b_arr = b_arr + invisible_const
        q_arr = q_arr / len(works)
        hulls[u] = _lower_hull(zip(b_arr.tolist(), q_arr.tolist()))

    levels = sorted(hulls)
    bandwidths = {}
    crossover = True
    for ui, u in enumerate(levels):
        for v in levels[ui + 1 :]:
            hu, hv = hulls[u], hulls[v]
            lo = max(hu[0][0], hv[0][0])
            hi = max(hu[-1][0], hv[-1][0])
            pad = 1.0 + 0.01 * max(hi - lo, 0.0)
            samples = sorted(
                {p[0] for p in hu if p[0] >= lo}
                | {p[0] for p in hv if p[0] >= lo}
                | set(np.linspace(lo, hi + pad, 257).tolist())
            )
            bc = None
            for b in samples:
                qv, qu = _hull_value(hv, b), _hull_value(hu, b)
                if not (math.isnan(qv) or math.isnan(qu)) and qv <= qu + 1e-12:
                    bc = b
                    break
            if bc is None:
                crossover = False
                continue
            strict = all(
                _hull_value(hv, b)
                < _hull_value(hu, b) + 1e-9 * max(1.0, abs(_hull_value(hu, b)))
                for b in samples
                if b > bc + 1e-12
            )
            if not strict:
                crossover = False
            bandwidths[(u, v)] = bc
    # Ordering: the next cross-over must come at or after the first hull
    # vertex that the previous cross-over makes reachable.
    ordering = True
    for u in levels[:-1]:
        bc = bandwidths.get((u, u + 1))
        if bc is None:
            ordering = False
            break
        if u + 2 in hulls:
            bc_next = bandwidths.get((u + 1, u + 2))
            if bc_next is None:
                ordering = False
                break
            landing = [p[0] for p in hulls[u + 1] if p[0] >= bc - 1e-9]
            first_reach = landing[0] if landing else bc
            if bc_next < first_reach - 1e-9:
                ordering = False
                break
    return DescentConditionsReport(
        crossover_holds=crossover,
        ordering_holds=ordering,
        crossover_bandwidths=bandwidths,
        hulls=hulls,
        points_evaluated=total_points,
    )


ALGORITHMS = ("proposed", "baseline", "greedy", "global")


def solve(problem, algorithm="proposed", **kwargs):
    """Dispatch an allocation problem to one of the named solvers."""
    if algorithm == "proposed":
        return steepest_descent(problem, **kwargs)
    if algorithm == "baseline":
        return baseline_alloc(problem)
    if algorithm == "greedy":
        return greedy_alloc(problem)
    if algorithm == "global":
        return global_search(problem)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def problem_from_json(obj):
    """Build an AllocationProblem from its JSON dict form.

    Schema: grid {rows, cols}; ladder_kbps list; server_capacity_kbps;
    omega; users list with id, capacity_kbps, viewport (either a
    {rows, col_segments} block or an explicit [[m, n], ...] list),
    marginal [[m, n], ...], probabilities [[m, n, p], ...] and rd
    (single {sigma, r0, d0} or {default, per_tile}).
    """
    grid = TileGrid(rows=int(obj["grid"]["rows"]), cols=int(obj["grid"]["cols"]))
    ladder = RateLadder(tuple(float(r) for r in obj["ladder_kbps"]))
    weights = tile_weight_map(grid)
    all_tiles = {(m, n) for m in range(1, grid.rows + 1) for n in range(1, grid.cols + 1)}
    users = []
    for entry in obj["users"]:
        vp_spec = entry["viewport"]
        if isinstance(vp_spec, dict):
            viewport = TileSet(
                grid=grid,
                rows=tuple(int(r) for r in vp_spec["rows"]),
                col_segments=tuple(tuple(int(c) for c in seg) for seg in vp_spec["col_segments"]),
            )
        else:
            viewport = tileset_from_members(grid, [tuple(t) for t in vp_spec])
        marginal = frozenset((int(m), int(n)) for m, n in entry.get("marginal", []))
        if marginal & viewport.members:
            raise ValueError("marginal tiles overlap the viewport block")
        if not marginal <= all_tiles:
            raise ValueError("marginal tile outside the grid")
        invisible = frozenset(all_tiles - viewport.members - marginal)
        probabilities = {tile: 0.0 for tile in all_tiles}
        for m, n, p in entry.get("probabilities", []):
            probabilities[(int(m), int(n))] = float(p)
        classification = TileClassification(
            viewport_tiles=viewport,
            marginal_tiles=marginal,
            invisible_tiles=invisible,
            probabilities=probabilities,
            threshold=float(entry.get("threshold", 0.05)),
        )
        rd_spec = entry["rd"]
        if "per_tile" in rd_spec:
            default = rd_spec.get("default")
            rd = {}
            for tile in viewport.members | marginal:
                rd[tile] = None
            for m, n, params in rd_spec["per_tile"]:
                rd[(int(m), int(n))] = RdParams(
                    sigma=float(params["sigma"]), r0=float(params["r0"]), d0=float(params["d0"])
                )
            for tile, params in rd.items():
                if params is None:
                    if default is None:
                        raise ValueError(f"no R-D parameters for visible tile {tile}")
                    rd[tile] = RdParams(
                        sigma=float(default["sigma"]),
                        r0=float(default["r0"]),
                        d0=float(default["d0"]),
                    )
        else:
            rd = RdParams(
                sigma=float(rd_spec["sigma"]), r0=float(rd_spec["r0"]), d0=float(rd_spec["d0"])
            )
        users.append(
            UserSession(
                user_id=entry["id"],
                classification=classification,
                capacity=float(entry["capacity_kbps"]),
                rd=rd,
                weights=weights,
            )
        )
    return AllocationProblem(
        users=tuple(users),
        server_capacity=float(obj["server_capacity_kbps"]),
        ladder=ladder,
        omega=float(obj.get("omega", 0.0)),
    )


def problem_to_json(problem):
    """JSON-ready dict form of a problem (round-trips via problem_from_json)."""
    grid = problem.grid
    users = []
    for user in problem.users:
        cls = user.classification
        visible = sorted(cls.viewport_tiles.members | cls.marginal_tiles)
        if isinstance(user.rd, RdParams):
            rd = {"sigma": user.rd.sigma, "r0": user.rd.r0, "d0": user.rd.d0}
        else:
            rd = {
                "per_tile": [
                    [m, n, {"sigma": p.sigma, "r0": p.r0, "d0": p.d0}]
                    for (m, n), p in sorted(user.rd.items())
                ]
            }
        users.append(
            {
                "id": user.user_id,
                "capacity_kbps": user.capacity,
                "viewport": {
                    "rows": list(cls.viewport_tiles.rows),
                    "col_segments": [list(seg) for seg in cls.viewport_tiles.col_segments],
                },
                "marginal": [list(t) for t in sorted(cls.marginal_tiles)],
                "probabilities": [[m, n, _p_total(cls, m, n)] for m, n in visible],
                "threshold": cls.threshold,
                "rd": rd,
            }
        )
    return {
        "grid": {"rows": grid.rows, "cols": grid.cols},
        "ladder_kbps": list(problem.ladder.rates),
        "server_capacity_kbps": problem.server_capacity,
        "omega": problem.omega,
        "users": users,
    }


def result_to_json(result, problem):
    """JSON-ready dict form of an allocation result."""
    users = []
    for pos, user in enumerate(problem.users):
        arr = result.rates.indices[pos]
        vp = list(user.classification.viewport_tiles.tiles())
        users.append(
            {
                "id": user.user_id,
                "viewport_index": int(arr[vp[0][0] - 1, vp[0][1] - 1]) if vp else None,
                "indices": arr.tolist(),
                "instability": result.per_user_instability[pos],
                "expected_weighted_mse": result.per_user_mse[pos],
                "ws_psnr_db": result.per_user_wspsnr[pos],
            }
        )
    return {
        "objective": result.objective,
        "consumed_visible_kbps": result.consumed_visible,
        "consumed_total_kbps": result.consumed_total,
        "iterations": result.iterations,
        "users": users,
    }
