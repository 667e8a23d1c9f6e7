"""Renders the LaTeX prompt templates of a source document to plain text fixtures.

Usage: prompt_fixtures.py <document.md>

Rendering rules: LaTeX escapes are undone, \\textbf is dropped, math-mode
angle brackets become literal, the `\\\\` line break is removed and trailing
whitespace on each line is trimmed. Blank lines are kept as written.
"""
import pathlib
import re
import sys

root = pathlib.Path(__file__).resolve().parents[2]
out = root / "tests" / "fixtures"
lines = pathlib.Path(sys.argv[1]).read_text(encoding="utf-8").split("\n")


def block(start, end):
    i = next(k for k, l in enumerate(lines) if start(l))
    j = next(k for k in range(i + 1, len(lines)) if end(lines[k]))
    return lines[i + 1:j]


def render(body):
    text = []
    for l in body:
        l = re.sub(r"\\textbf\{(.*?)\}", r"\1", l)
        l = l.replace("$<$", "<").replace("$>$", ">")
        l = l.replace("\\#", "#").replace("\\{", "{").replace("\\}", "}").replace("\\_", "_").replace("\\$", "$")
        l = re.sub(r"\s*\\\\\s*$", "", l)
        text.append(l.rstrip())
    while text and not text[-1]:
        text.pop()
    return "\n".join(text)


system_start = next(k for k, l in enumerate(lines) if l.startswith("System Prompt &"))
judge_system = block(lambda l: l is lines[system_start + 1], lambda l: l.startswith("\\end{minipage}"))
user_start = next(k for k, l in enumerate(lines) if l.startswith("User Prompt &") and k > system_start)
judge_user = lines[user_start + 2:next(k for k in range(user_start, len(lines)) if lines[k].startswith("\\end{minipage}"))]
yvce_system = block(lambda l: "title=YVCE System Prompt" in l, lambda l: l.startswith("\\end{tcolorbox}"))
yvce_nudge = block(lambda l: "title=YVCE Nudge Prompt" in l, lambda l: l.startswith("\\end{tcolorbox}"))

for name, body in [("judge_system.txt", judge_system), ("judge_user.txt", judge_user),
                   ("yvce_system.txt", yvce_system), ("yvce_nudge.txt", yvce_nudge)]:
    (out / name).write_bytes(render(body).encode("utf-8"))
    print(name, file=sys.stderr)
