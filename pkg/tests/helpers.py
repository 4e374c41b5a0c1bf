"""Shared test utilities: tiny corpus builders and the independent
brute-force replay oracle (selection-sort ranking, pair-counting AUC)."""

from talentrank.corpus import (
    Impression,
    MemberProfile,
    ProfileStore,
    Query,
    Session,
    SessionStore,
)


def profiles_for(n):
    return ProfileStore(
        MemberProfile(i, frozenset(), frozenset(), frozenset(), headline_text=f"m{i}")
        for i in range(n)
    )


def session_of(labels, sid=0, members=None):
    members = members or list(range(len(labels)))
    return Session(
        session_id=sid, timestamp=100 + sid, query=Query(keywords="q"),
        impressions=tuple(Impression(m, l, i) for i, (m, l) in enumerate(zip(members, labels))),
    )


def random_corpus(rng, max_sessions=20, max_impressions=10, n_members=30):
    profiles = profiles_for(n_members)
    sessions = []
    for sid in range(rng.randint(1, max_sessions + 1)):
        n = rng.randint(1, max_impressions + 1)
        members = rng.choice(n_members, size=n, replace=False).tolist()
        labels = rng.randint(0, 2, size=n).tolist()
        sessions.append(session_of(labels, sid=sid, members=members))
    return profiles, SessionStore(sessions)


def quantized_scorer(seed):
    # pure function of the member on a coarse grid, so ties are common and
    # the tie rules get exercised
    def scorer(query, profile):
        return float((profile.member_id * 7919 + seed * 104729) % 5) / 2.0

    return scorer


def brute_force_replay(scorer, sessions, profiles, ks, denominator="min"):
    """Independent replay oracle; mirrors the stated tie rules only."""
    per_k = {k: [] for k in ks}
    pooled = []
    for session in sessions.sessions():
        entries = []
        for imp in session.impressions:
            entries.append([float(scorer(session.query, profiles[imp.member_id])),
                            imp.member_id, imp.label])
        ranked = []
        remaining = list(entries)
        while remaining:
            best = remaining[0]
            for cand in remaining[1:]:
                if cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                    best = cand
            ranked.append(best)
            remaining.remove(best)
        labels = [r[2] for r in ranked]
        for k in ks:
            cut = min(k, len(labels))
            denom = cut if denominator == "min" else k
            per_k[k].append(sum(labels[:cut]) / denom)
        if 0 < sum(labels) < len(labels):
            pooled.extend((r[0], r[2]) for r in ranked)
    prec = {k: sum(v) / len(v) for k, v in per_k.items()}
    pooled_auc = None
    pos = [s for s, l in pooled if l == 1]
    neg = [s for s, l in pooled if l == 0]
    if pos and neg:
        wins = sum(1.0 if p > n else (0.5 if p == n else 0.0) for p in pos for n in neg)
        pooled_auc = wins / (len(pos) * len(neg))
    return prec, pooled_auc
