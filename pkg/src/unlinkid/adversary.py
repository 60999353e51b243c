"""Exact-match linkage adversary over pooled relying-party databases.

Users interact with services under one identifier regime; the adversary
pools every service's records and joins them on identical identifier strings.
Fuzzy or model-based linkage is out of scope: exact joins already separate a
lifelong identifier from per-party and per-interaction identifiers.
"""
from __future__ import annotations

import random
from collections import Counter, defaultdict
from dataclasses import dataclass
from itertools import combinations

from .participant import SelectionPolicy, select_identifier
from .portfolio import PortfolioSecret, derive_portfolio, encode_identifier

REGIMES = ("uli", "per_rp", "per_interaction")

HEADER = "adversary model: exact-match join on presented identifier strings across pooled service databases"


@dataclass(frozen=True)
class LinkageReport:
    regime: str
    services: int
    users: int
    interactions: int
    adversary_joins: int
    ground_truth_pairs: int
    false_joins: int
    within_service_links: int
    within_service_pairs: int

    @property
    def join_rate(self) -> float:
        if not self.ground_truth_pairs:
            return 0.0
        return self.adversary_joins / self.ground_truth_pairs

    @property
    def within_service_rate(self) -> float:
        if not self.within_service_pairs:
            return 0.0
        return self.within_service_links / self.within_service_pairs

    def render(self) -> str:
        fields = {
            "regime": self.regime,
            "services": self.services,
            "users": self.users,
            "interactions": self.interactions,
            "adversary_joins": self.adversary_joins,
            "ground_truth_pairs": self.ground_truth_pairs,
            "join_rate": f"{self.join_rate:.6f}",
            "false_joins": self.false_joins,
            "within_service_links": self.within_service_links,
            "within_service_pairs": self.within_service_pairs,
            "within_service_rate": f"{self.within_service_rate:.6f}",
        }
        summary = (f"{self.regime}: {self.adversary_joins}/{self.ground_truth_pairs} cross-service pairs joined "
                   f"(join_rate={self.join_rate:.6f}), within-service rate {self.within_service_rate:.6f}")
        return "\n".join([f"# {HEADER}", summary] + [f"{k}={v}" for k, v in fields.items()]) + "\n"


def simulate_records(regime: str, services: int, users: int, interactions_per_user: int,
                     seed: int) -> list[tuple[int, int, str]]:
    """``(service, user, presented_string)`` for every interaction."""
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    if min(services, users, interactions_per_user) < 1:
        raise ValueError("services, users and interactions must all be >= 1")
    rng = random.Random(seed)
    ulis = rng.sample(range(10**9), users) if regime == "uli" else None
    records = []
    for user in range(users):
        if regime == "uli":
            uli = f"{ulis[user]:09d}"
        else:
            size = services if regime == "per_rp" else interactions_per_user
            portfolio = derive_portfolio(PortfolioSecret(rng.getrandbits(256).to_bytes(32, "big")), size)
            policy = SelectionPolicy("per_relying_party" if regime == "per_rp" else "per_interaction")
        for _ in range(interactions_per_user):
            service = rng.randrange(services)
            if regime == "uli":
                shown = uli
            else:
                shown = encode_identifier(select_identifier(policy, portfolio, f"service-{service}"))
            records.append((service, user, shown))
    return records


def run_linkage_adversary(regime: str, services: int, users: int, interactions_per_user: int,
                          seed: int = 0) -> LinkageReport:
    records = simulate_records(regime, services, users, interactions_per_user, seed)

    # ground truth: (user, s1, s2) with the user present at both services
    visited: dict[int, set[int]] = defaultdict(set)
    for service, user, _ in records:
        visited[user].add(service)
    truth = {(u, a, b) for u, ss in visited.items() for a, b in combinations(sorted(ss), 2)}

    # adversary: join on identical strings across services
    by_key: dict[str, set[tuple[int, int]]] = defaultdict(set)
    for service, user, shown in records:
        by_key[shown].add((service, user))
    joined = set()
    false_joins = 0
    for holders in by_key.values():
        for (s1, u1), (s2, u2) in combinations(sorted(holders), 2):
            if s1 == s2:
                continue
            if u1 == u2:
                joined.add((u1, min(s1, s2), max(s1, s2)))
            else:
                false_joins += 1

    # within-service linkage: pairs of one user's visits to one service sharing a key
    groups: dict[tuple[int, int], Counter] = defaultdict(Counter)
    for service, user, shown in records:
        groups[(user, service)][shown] += 1
    links = pairs = 0
    for counts in groups.values():
        total = sum(counts.values())
        pairs += total * (total - 1) // 2
        links += sum(c * (c - 1) // 2 for c in counts.values())

    return LinkageReport(regime, services, users, interactions_per_user, len(joined & truth), len(truth),
                         false_joins, links, pairs)
