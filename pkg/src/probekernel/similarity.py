"""Trigram similarity: the engine's single lexical scorer.

Used by SEMANTIC_LIKE predicates, locate probes, memory lookup by
similarity, and empty-result diagnosis.  The definition is pinned so
scores are reproducible across processes:

  1. lowercase the string
  2. pad with two spaces on each side
  3. take every 3-character window
  4. drop windows that are entirely spaces

``similarity(a, b)`` is the Jaccard coefficient of the two trigram
sets.  Two empty/whitespace-only strings score 0.0, not 1.0.
"""

from __future__ import annotations


def trigrams(text: str) -> frozenset[str]:
    padded = "  " + text.lower() + "  "
    grams = set()
    for i in range(len(padded) - 2):
        g = padded[i : i + 3]
        if g != "   ":
            grams.add(g)
    return frozenset(grams)


def similarity(a: str, b: str) -> float:
    ta, tb = trigrams(a), trigrams(b)
    if not ta or not tb:
        return 0.0
    inter = len(ta & tb)
    if inter == 0:
        return 0.0
    return inter / len(ta | tb)


def token_set(text: str) -> frozenset[str]:
    """Lowercased word tokens; non-alphanumerics act as separators."""
    out = []
    cur = []
    for ch in text.lower():
        if ch.isalnum():
            cur.append(ch)
        elif cur:
            out.append("".join(cur))
            cur = []
    if cur:
        out.append("".join(cur))
    return frozenset(out)


def token_jaccard(a: str, b: str) -> float:
    ta, tb = token_set(a), token_set(b)
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)
