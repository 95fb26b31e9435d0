#!/usr/bin/env python3
"""Freeze the edit-distance oracle fixture.

Generates 1000 seeded random string pairs (lengths 0 to 400) and records,
for each, the textbook dynamic-programming edit distance over the normalized
texts plus the normalized ratio. The DP here is deliberately independent of
the package's production implementation; the test suite asserts exact
agreement on every frozen value and re-derives a random subset live.

Run from the repository root:  python3 tools/gen_levenshtein_fixture.py
"""

from __future__ import annotations

import json
import os
import random
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from ctfkit.domain import normalize_text

SEED = 1729
COUNT = 1000
MAX_LEN = 400
OUT = os.path.normpath(
    os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures", "levenshtein_oracle.json")
)

# NFC-stable alphabet: ascii text, digits, punctuation, some Greek, and
# spaces so whitespace collapsing stays in play.
ALPHABET = (
    "abcdefghijklmnopqrstuvwxyz"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "0123456789"
    ".,;:!?()-"
    "αβγδεζ"
    "    "
)


def dp_levenshtein(a: str, b: str) -> int:
    """Plain two-row Wagner-Fischer, written for clarity over speed."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[len(b)]


def main() -> None:
    rng = random.Random(SEED)
    pairs = []
    for _ in range(COUNT):
        a = "".join(rng.choice(ALPHABET) for _ in range(rng.randint(0, MAX_LEN)))
        b = "".join(rng.choice(ALPHABET) for _ in range(rng.randint(0, MAX_LEN)))
        na, nb = normalize_text(a), normalize_text(b)
        distance = dp_levenshtein(na, nb)
        longest = max(len(na), len(nb))
        ratio = 0.0 if longest == 0 else distance / longest
        pairs.append({"a": a, "b": b, "distance": distance, "ratio": ratio})
    fixture = {"seed": SEED, "max_len": MAX_LEN, "pairs": pairs}
    with open(OUT, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(fixture, fh, ensure_ascii=False)
        fh.write("\n")
    print(f"wrote {COUNT} frozen pairs -> {OUT}")


if __name__ == "__main__":
    main()
