"""
Suggestions for mistyped names: commands, scenarios, palettes, domains and
dotted run-config keys (``section.key``).

A query is matched as an in-order subsequence against the whole name and,
for dotted keys, against the key without its section, so ``--max_epochs``
finds ``train.max_epochs``.  Queries that are no subsequence of anything
(transposed letters, a wrong character) fall back to edit similarity.
"""
import difflib
import re

from .errors import ArgumentError

MAX_SUGGESTIONS = 3
# Minimum difflib ratio for the typo fallback.
TYPO_CUTOFF = 0.6


def _normalize(name: str) -> str:
    return re.sub(r'[-_ ]', '', name.lower())


def _views(name: str) -> list[str]:
    """The name itself and, for dotted keys, the part after the section."""
    views = [name]
    if '.' in name:
        views.append(name.rsplit('.', 1)[1])
    return views


def build_regex(query: str) -> str:
    """Subsequence pattern: every query character, in order, lazily spaced."""
    return '.*?'.join(map(re.escape, _normalize(query)))


def score(string: str, regex: str) -> float:
    """
    Score in (0, 100]; 0 means no match.  Earlier and tighter matches score
    higher, and a query spelling the whole string scores 100.
    """
    match = re.search(regex, _normalize(string))
    if match is None:
        return 0
    pos_match = match.start() + 1
    len_match = (match.end() - match.start()) + 1
    return 100.0 / (pos_match * len_match)


def name_score(query: str, name: str) -> float:
    """Best score over the views of `name`; exact view matches score 100."""
    regex = build_regex(query)
    best = 0.0
    for view in _views(name):
        if _normalize(view) == _normalize(query):
            return 100.0
        best = max(best, score(view, regex))
    return best


def rank_list(query: str, items: list[str]) -> list[tuple[str, float]]:
    ranked = [(item, name_score(query, item)) for item in items]
    # Stable on ties, so equal scores keep the caller's order.
    ranked.sort(key=lambda x: x[1], reverse=True)
    return ranked


def filter_list(query: str, items: list[str]) -> list[str]:
    """Items with a nonzero score, best first."""
    return [item for item, item_score in rank_list(query, items) if item_score > 0]


def close_names(query: str, items: list[str], limit: int = MAX_SUGGESTIONS) -> list[str]:
    """Subsequence matches first; otherwise the most similar spellings."""
    matches = filter_list(query, items)
    if matches:
        return matches[:limit]
    by_view = {}
    for item in items:
        for view in _views(item):
            by_view.setdefault(view, item)
    similar = difflib.get_close_matches(query, list(by_view), n=limit, cutoff=TYPO_CUTOFF)
    return list(dict.fromkeys(by_view[view] for view in similar))


def _known_summary(known: list[str]) -> str:
    if known and all('.' in name for name in known):
        sections = sorted({name.split('.', 1)[0] for name in known})
        return f"keys are section.key with sections {', '.join(sections)}"
    return f"known names: {', '.join(sorted(known))}"


def unknown_name_error(kind: str, name: str, known: list[str]) -> ArgumentError:
    """
    ArgumentError for an unknown name with up to three suggestions.  Without
    a suggestion it lists the known names, or the sections for config keys.
    """
    close = close_names(name, known)
    if close:
        hint = f"did you mean: {', '.join(close)}?"
    else:
        hint = _known_summary(known)
    return ArgumentError(f"Unknown {kind} {name!r}; {hint}")
