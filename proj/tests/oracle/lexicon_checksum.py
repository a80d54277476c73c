"""Prints the sha256 of the canonical lexicon + entity-map dump, built from the
published LaTeX keyword paragraphs and entity table (path in argv[1]) rather
than from data/.

Dump format: "<category>\t<phrase>\n" per phrase, categories in the order
gender, cultural, religious, racial, social, phrases in list order; then
"ner\t<TYPE>\t<cat>...\n" per entity type sorted by type, categories in the
same order.
"""
import hashlib
import pathlib
import re
import sys

SOURCE = pathlib.Path(sys.argv[1]).read_text(encoding="utf-8")
ORDER = ["gender", "cultural", "religious", "racial", "sociocultural", "social"]

lists = {}
for m in re.finditer(r"\\paragraph\{(\w+) Bias\}\s*\n(.*)", SOURCE):
    lists[m.group(1).lower()] = re.findall(r"\\texttt\{([^}]*)\}", m.group(2))

ner = {}
for m in re.finditer(r"^\\texttt\{([A-Z]+)\}\*?\s*&\s*(.+?)\s*\\\\", SOURCE, re.M):
    cats = [c.strip().lower().replace("socio-cultural", "sociocultural") for c in m.group(2).split(",")]
    ner[m.group(1)] = sorted(cats, key=ORDER.index)

dump = ""
for cat in ORDER:
    for p in lists.get(cat, []):
        dump += f"{cat}\t{p}\n"
for typ in sorted(ner):
    dump += "ner\t" + typ + "".join("\t" + c for c in ner[typ]) + "\n"

print({k: len(v) for k, v in lists.items()}, ner, file=sys.stderr)
print(hashlib.sha256(dump.encode()).hexdigest())
