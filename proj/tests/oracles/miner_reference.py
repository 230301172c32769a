#!/usr/bin/env python3
# Copyright 2026 The ahfx Authors.
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Reference findings for the report miner snippet suite.

Evaluates the shipped rule file with Python's Unicode `re` engine on the
original (unfolded) text and writes tests/data/miner_cases.json. Offsets
are UTF-8 byte offsets.

    python3 tests/oracles/miner_reference.py > tests/data/miner_cases.json
"""

import csv
import json
import pathlib
import re

ROOT = pathlib.Path(__file__).resolve().parents[2]

SNIPPETS = [
    "Der ses lungestase.",
    "Ingen lungestase.",
    "CT uden kontrast. Let stase.",
    "ikke overbevisende lungestase",
    "tegn på inkompensation",
    "Billedet er foreneligt med incompensation.",
    "Ingen tegn på inkompensation.",
    "Kendt hjertesvigt. Ingen lungeødem.",
    "Lungeødem og bilateral pleuravæske.",
    "Ingen pleuravæske.",
    "Uden hjertesvigt, men let stase.",
    "Normale forhold.",
    "Stase? Ikke stase.",
    "HJERTEINSUFFICIENS MED STASE OG LUNGEØDEM.",
    "Ikke perikardie- eller pleuravæske.",
    "Ingen stase, ingen pleuraeffusion.",
    "Let pulmonal stase, CT uden kontrast.",
    "Lunge ødem bilateralt.",
    "Ikke mistanke om incompensation.",
    "Sværere stase end forrige undersøgelse, pleurale ansamlinger.",
]

AHF = {"congestion", "edema", "heart_failure", "decompensation"}


def load_rules():
    with open(ROOT / "samples" / "rules" / "default_rules.csv", newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    rules = []
    for r in rows:
        flags = re.IGNORECASE if "i" in r["flags"] else 0
        rules.append((r["category"], r["polarity"], re.compile(r["pattern"], flags)))
    return rules


def byte_offset(text, char_index):
    return len(text[:char_index].encode("utf-8"))


def findings(text, rules):
    neg, pos = [], []
    for idx, (cat, pol, rx) in enumerate(rules):
        for m in rx.finditer(text):
            if m.end() == m.start():
                continue
            hit = {
                "category": cat,
                "polarity": pol,
                "begin": byte_offset(text, m.start()),
                "end": byte_offset(text, m.end()),
                "text": m.group(0),
                "_rule": idx,
            }
            (neg if pol == "negative" else pos).append(hit)
    kept = list(neg)
    for p in pos:
        if not any(n["category"] == p["category"] and n["begin"] <= p["begin"] and p["end"] <= n["end"]
                   for n in neg):
            kept.append(p)
    kept.sort(key=lambda h: (h["begin"], 0 if h["polarity"] == "negative" else 1, h["_rule"]))
    for h in kept:
        del h["_rule"]
    return kept


def main():
    rules = load_rules()
    cases = []
    for i, text in enumerate(SNIPPETS):
        fs = findings(text, rules)
        positive = any(f["polarity"] == "positive" and f["category"] in AHF for f in fs)
        cases.append({"id": f"case{i:02d}", "text": text, "findings": fs,
                      "label": "positive" if positive else "negative"})
    print(json.dumps(cases, ensure_ascii=False, indent=1))


if __name__ == "__main__":
    main()
