"""Generates judge-reply parsing cases with expected verdicts.

The reference parser here follows the reply contract: chunk tags keyed by id,
missing ids are null, exactly one final_grade, values restricted to
0/1/null, duplicate or out-of-range ids rejected. Output is frozen into
tests/fixtures/judge_cases.json.
"""
import json
import pathlib
import random
import re

root = pathlib.Path(__file__).resolve().parents[2]
CHUNK = re.compile(r"<chunk\s+id\s*=\s*[\"']?\s*(\d+)\s*[\"']?\s*>([^<]*)</chunk\s*>", re.I)
FINAL = re.compile(r"<final_grade\s*>([^<]*)</final_grade\s*>", re.I)


def reference(reply, n):
    labels = [None] * n
    seen = set()
    for m in CHUNK.finditer(reply):
        i = int(m.group(1))
        if i < 1 or i > n or i in seen:
            return None
        seen.add(i)
        v = m.group(2).strip().lower()
        if v not in ("0", "1", "null"):
            return None
        labels[i - 1] = None if v == "null" else int(v)
    finals = [m.group(1).strip().lower() for m in FINAL.finditer(reply)]
    if len(finals) != 1 or finals[0] not in ("0", "1"):
        return None
    return {"chunk_labels": labels, "final_label": int(finals[0])}


rng = random.Random(20240611)
prose = ["", "Here is my evaluation.\n", "Sure! ", "After careful review:\n\n", "Grading below.\n"]
cases = []
while len(cases) < 50:
    n = rng.randint(1, 7)
    ids = list(range(1, n + 1))
    rng.shuffle(ids) if rng.random() < 0.3 else None
    kept = [i for i in ids if rng.random() > 0.15]
    parts = []
    kind = rng.choice(["ok"] * 6 + ["dup", "range", "value", "nofinal", "twofinal", "badfinal"])
    for i in kept:
        v = rng.choice(["0", "1", "null", " 1 ", "NULL"])
        q = rng.choice(['"', "'", ""])
        parts.append(f"<chunk id={q}{i}{q}>{v}</chunk>")
    if kind == "dup" and kept:
        parts.append(f'<chunk id="{kept[0]}">1</chunk>')
    if kind == "range":
        parts.append(f'<chunk id="{n + 1}">0</chunk>')
    if kind == "value" and parts:
        parts[0] = re.sub(r">[^<]*<", ">maybe<", parts[0])
    final = rng.choice(["0", "1"])
    if kind == "badfinal":
        final = "0.5"
    if kind != "nofinal":
        parts.append(f"<final_grade>{final}</final_grade>")
    if kind == "twofinal":
        parts.append("<final_grade>1</final_grade>")
    sep = rng.choice(["\n", "", "  \n"])
    reply = rng.choice(prose) + sep.join(parts) + rng.choice(["", "\nDone.", " Let me know."])
    expected = reference(reply, n)
    cases.append({"reply": reply, "n_chunks": n,
                  "expected": expected, "error": expected is None})

(root / "tests" / "fixtures" / "judge_cases.json").write_text(json.dumps(cases, indent=1) + "\n")
print(sum(c["error"] for c in cases), "error cases of", len(cases))
