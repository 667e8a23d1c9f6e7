"""Generates verbalized-confidence parsing cases with expected scores.

Reference rules: a continuation (when given) is read first, taking its last
"**Confidence**:" line and otherwise its last class mention; failing that
the response's last confidence line is used. Class names match
case-insensitively on word boundaries, longest name first. A class maps to
the midpoint of its tenth. Output is frozen into tests/fixtures/yvce_cases.json.
"""
import json
import pathlib
import random
import re

root = pathlib.Path(__file__).resolve().parents[2]
CLASSES = ["Almost no chance", "Highly unlikely", "Chances are slight", "Unlikely", "Less than even",
           "Better than even", "Likely", "Very good chance", "Highly likely", "Almost certain"]
ALT = "|".join(re.escape(c) for c in sorted(CLASSES, key=len, reverse=True))
MENTION = re.compile(r"(?<![A-Za-z0-9])(" + ALT + r")(?![A-Za-z0-9])", re.I)
LINE = re.compile(r"\*\*confidence\*\*:", re.I)


def index_of(name):
    return [c.lower() for c in CLASSES].index(name.lower())


def line_class(text):
    marks = [m.end() for m in LINE.finditer(text)]
    if not marks:
        return None
    rest = text[marks[-1]:].lstrip(" \t\"'*$")
    m = MENTION.match(rest)
    return index_of(m.group(1)) if m else None


def last_mention(text):
    found = MENTION.findall(text)
    return index_of(found[-1]) if found else None


def reference(response, continuation):
    if continuation is not None:
        k = line_class(continuation)
        if k is None:
            k = last_mention(continuation)
        if k is not None:
            return k
    return line_class(response)


rng = random.Random(7)
filler = ["I checked the arithmetic.", "The answer seems right.", "**Answer**: B", "unlikelyhood is not a class",
          "Maybe likely, maybe not.", ""]
cases = []
while len(cases) < 50:
    kind = rng.choice(["line", "line", "cont", "cont_line", "none", "bad_line", "case"])
    name = rng.choice(CLASSES)
    other = rng.choice(CLASSES)
    response = rng.choice(filler) + "\n"
    continuation = None
    if kind == "line":
        response += f"**Confidence**: {other}\n" * rng.randint(0, 1) + f"**Confidence**: {name}"
    elif kind == "case":
        response += f"**CONFIDENCE**: \"{name.upper()}\""
    elif kind == "cont":
        response += f"**Confidence**: {other}"
        continuation = f" \"{name}\" because " + rng.choice(filler)
    elif kind == "cont_line":
        continuation = f" {other}.\n**Confidence**: {name}"
    elif kind == "bad_line":
        response += "**Confidence**: very sure"
        if rng.random() < 0.5:
            continuation = "nothing to add"
    else:
        response += rng.choice(filler)
    k = reference(response, continuation)
    cases.append({"response": response, "continuation": continuation,
                  "score": None if k is None else round(0.05 + 0.1 * k, 2), "error": k is None})

(root / "tests" / "fixtures" / "yvce_cases.json").write_text(json.dumps(cases, indent=1) + "\n")
print(sum(c["error"] for c in cases), "error cases of", len(cases))
