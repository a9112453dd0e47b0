"""Per-state 2x2 bimatrix payoffs, canonical R/S/T/P views, and dilemma
classification.

Each state yields one bimatrix per (active type, passive type) pair; mutual
defection is the (0, 0) anchor. The unobserved AV-AV pair is filled by
assuming AV utilities do not depend on the opponent's type. Games are sorted
into classic dilemma classes from the signs and ordering of the canonical
payoffs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DataError
from .qre import (
    EventSet,
    InteractionType,
    ROLE_ACTIVE,
    ROLE_PASSIVE,
    UtilityModel,
    interaction_type,
    pair_name,
    utility,
)

OUTCOME_CELLS = ("CC", "CD", "DC", "DD")


class GameClass(Enum):
    PRISONERS_DILEMMA = "prisoners_dilemma"
    STAG_HUNT = "stag_hunt"
    CHICKEN_GAME = "chicken_game"
    OTHER_SOCIAL_DILEMMA = "other_social_dilemma"
    NON_SOCIAL_DILEMMA = "non_social_dilemma"


GAME_CLASS_ORDER = tuple(GameClass)


@dataclass
class PayoffTable:
    """2x2 bimatrix for one state and one (active type, passive type) pair."""

    state_id: str
    pair: tuple[str, str]
    active: dict[str, float]       # outcome -> active vehicle payoff
    passive: dict[str, float]      # outcome -> passive vehicle payoff
    imputed: bool = False

    def entry(self, outcome: str) -> tuple[float, float]:
        return self.active[outcome], self.passive[outcome]


@dataclass
class CanonicalPayoffs:
    role: str
    r: float
    s: float
    t: float
    p: float = 0.0

    @property
    def greed(self) -> float:
        return self.t - self.r

    @property
    def fear(self) -> float:
        return self.p - self.s


def build_table(s_tilde, model: UtilityModel, pair: tuple[str, str],
                state_id: str = "", allow_imputed: bool = False) -> PayoffTable:
    """Evaluate the 2x2 bimatrix for a pair at one state.

    The interaction type of each side follows its own type and the
    opponent's; an AV-AV pair requires imputation to be enabled.
    """
    a_type, p_type = pair
    t_a = interaction_type(a_type, p_type)
    t_p = interaction_type(p_type, a_type)
    imputed = not (t_a.fitted and t_p.fitted)
    if imputed and not allow_imputed:
        raise DataError("AV-AV pair requested with imputation disabled")
    s_tilde = np.asarray(s_tilde, dtype=float)
    active = {o: utility(model.beta_slice(ROLE_ACTIVE, t_a, o), s_tilde)
              for o in ("CC", "CD", "DC")}
    passive = {o: utility(model.beta_slice(ROLE_PASSIVE, t_p, o), s_tilde)
               for o in ("CC", "CD", "DC")}
    active["DD"] = 0.0
    passive["DD"] = 0.0
    return PayoffTable(state_id=state_id, pair=pair, active=active,
                       passive=passive, imputed=imputed)


def impute_av_av(s_tilde, model: UtilityModel, state_id: str = "") -> PayoffTable:
    """AV-AV table assembled from each role's AV-versus-HDV utilities."""
    return build_table(s_tilde, model, ("AV", "AV"), state_id=state_id,
                       allow_imputed=True)


def canonical(table: PayoffTable, role: str) -> CanonicalPayoffs:
    """Map a bimatrix to that role's (R, S, T, P).

    Reward is mutual cooperation and punishment is mutual defection for both
    roles; temptation/sucker swap cells between roles because the outcome
    code's first letter belongs to the active vehicle.
    """
    payoff = table.active if role == "active" else table.passive
    if role == "active":
        return CanonicalPayoffs(role=role, r=payoff["CC"], s=payoff["CD"],
                                t=payoff["DC"], p=payoff["DD"])
    return CanonicalPayoffs(role=role, r=payoff["CC"], s=payoff["DC"],
                            t=payoff["CD"], p=payoff["DD"])


def classify(c: CanonicalPayoffs, eps: float = 1e-9) -> GameClass:
    """Dilemma class of one canonical payoff quadruple.

    A social dilemma needs R > P, R > S, 2R > T + S, and greed (T > R) or
    fear (P > S), all with an ``eps`` margin; the named classes then follow
    the strict ordering of the four payoffs. Dilemmas matching none of the
    named orderings fall into the catch-all class.
    """
    r, s, t, p = c.r, c.s, c.t, c.p
    is_sd = (
        r > p + eps
        and r > s + eps
        and 2.0 * r > t + s + eps
        and (t > r + eps or p > s + eps)
    )
    if not is_sd:
        return GameClass.NON_SOCIAL_DILEMMA
    if t > r + eps and r > p + eps and p > s + eps:
        return GameClass.PRISONERS_DILEMMA
    if r > t + eps and t > p + eps and p > s + eps:
        return GameClass.STAG_HUNT
    if t > r + eps and r > s + eps and s > p + eps:
        return GameClass.CHICKEN_GAME
    return GameClass.OTHER_SOCIAL_DILEMMA


def classify_state(s_tilde, model: UtilityModel, pair: tuple[str, str],
                   eps: float = 1e-9) -> tuple[GameClass, GameClass]:
    """(active class, passive class) for one state's observed pair."""
    table = build_table(s_tilde, model, pair, allow_imputed=True)
    return (classify(canonical(table, "active"), eps),
            classify(canonical(table, "passive"), eps))


def tabulate(es: EventSet, model: UtilityModel, eps: float = 1e-9) -> dict:
    """Cross-tab of (active class x passive class) per interaction pair."""
    pairs = es.pair_labels()
    counts: dict[str, dict[str, dict[str, int]]] = {}
    for i in range(len(es)):
        a_type, p_type = pairs[i].split("-")
        a_cls, p_cls = classify_state(es.s_tilde[i], model, (a_type, p_type), eps)
        cell = (counts
                .setdefault(pairs[i], {})
                .setdefault(a_cls.value, {}))
        cell[p_cls.value] = cell.get(p_cls.value, 0) + 1

    out: dict = {"pairs": {}}
    for pair, grid in sorted(counts.items()):
        names = [g.value for g in GAME_CLASS_ORDER]
        matrix = [[grid.get(a, {}).get(p, 0) for p in names] for a in names]
        total = int(np.sum(matrix))
        out["pairs"][pair] = {
            "classes": names,
            "active_by_passive": matrix,
            "row_totals": [int(np.sum(row)) for row in matrix],
            "col_totals": [int(np.sum(col)) for col in np.asarray(matrix).T],
            "total": total,
        }
    out["total"] = int(sum(p["total"] for p in out["pairs"].values()))
    return out


# ---------------------------------------------------------------------------
# Payoff CSV (one row per state, pair, and role)

PAYOFF_HEADER = ["state_id", "pair", "role", "R", "S", "T", "P",
                 "fear", "greed", "game_class", "imputed"]

ALL_PAIRS = (("HDV", "HDV"), ("HDV", "AV"), ("AV", "HDV"), ("AV", "AV"))


def payoff_rows(es: EventSet, model: UtilityModel, eps: float = 1e-9):
    """Canonical payoffs for every state and all four pairs, both roles.

    The observed pair's rows carry ``imputed`` False except AV-AV, which is
    always assembled under the opponent-independence assumption.
    """
    rows = []
    for i in range(len(es)):
        state_id = str(i)
        for pair in ALL_PAIRS:
            table = build_table(es.s_tilde[i], model, pair,
                                state_id=state_id, allow_imputed=True)
            for role in ("active", "passive"):
                c = canonical(table, role)
                rows.append({
                    "state_id": state_id,
                    "pair": pair_name(*pair),
                    "role": role,
                    "R": c.r, "S": c.s, "T": c.t, "P": c.p,
                    "fear": c.fear, "greed": c.greed,
                    "game_class": classify(c, eps).value,
                    "imputed": int(table.imputed),
                })
    return rows


def write_payoff_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(PAYOFF_HEADER)
        for row in rows:
            writer.writerow([
                row["state_id"], row["pair"], row["role"],
                repr(float(row["R"])), repr(float(row["S"])),
                repr(float(row["T"])), repr(float(row["P"])),
                repr(float(row["fear"])), repr(float(row["greed"])),
                row["game_class"], row["imputed"],
            ])


def read_payoff_csv(path: str | Path) -> list[dict]:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != PAYOFF_HEADER:
            raise DataError(f"{path}: expected header {','.join(PAYOFF_HEADER)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "state_id": row["state_id"],
                    "pair": row["pair"],
                    "role": row["role"],
                    "R": float(row["R"]), "S": float(row["S"]),
                    "T": float(row["T"]), "P": float(row["P"]),
                    "fear": float(row["fear"]), "greed": float(row["greed"]),
                    "game_class": row["game_class"],
                    "imputed": int(row["imputed"]),
                })
            except (ValueError, KeyError) as exc:
                raise DataError(f"{path}:{line_no}: bad payoff row ({exc})") from None
    return rows
