#!/usr/bin/env python3
"""Assemble the bundled corpora from the Open Shakespeare text package.

The source package (shakespeare-0.6, Open Knowledge Foundation) ships cleaned
Project Gutenberg texts without the Gutenberg boilerplate. Usage:

    python3 scripts/prepare_corpora.py /path/to/shakespeare-0.6 corpora/

Line endings are normalized to LF and trailing whitespace is stripped from every
line. The script prints a manifest (name, bytes, sha256) that is also written to
corpora/MANIFEST.
"""

import hashlib
import re
import sys
from pathlib import Path

SHAKESPEARE = "shksprdata/texts"
MILTON = "miltondata/texts"

# Held out from pretraining.
SHAKESPEARE_VAL = ["hamlet", "macbeth", "lear", "tempest"]

PRETRAIN_PLAYS = [
    "as_you_like_it",
    "comedy_of_errors",
    "coriolanus",
    "henry_iv_part_1",
    "henry_v",
    "julius_caesar",
    "merchant_of_venice",
    "midsummer_nights_dream",
    "much_ado_about_nothing",
    "othello",
    "richard_ii",
    "richard_iii",
    "romeo_and_juliet",
    "taming_of_the_shrew",
    "twelfth_night",
    "winters_tale",
]


def clean(text: str) -> str:
    lines = text.replace("\r\n", "\n").replace("\r", "\n").split("\n")
    return "\n".join(line.rstrip() for line in lines).strip("\n") + "\n"


def read(path: Path) -> str:
    return clean(path.read_bytes().decode("utf-8"))


def strip_line_numbers(text: str) -> str:
    # Editorial verse numbers ("...foiled        10") are padded with long
    # runs of spaces; they are not part of the poem.
    return re.sub(r"[ \t]{2,}\d+$", "", text, flags=re.MULTILINE)


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    src = Path(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    plays = lambda names: [read(src / SHAKESPEARE / f"{n}_gut.txt") for n in names]
    outputs = {
        "pretrain.txt": "\n\n".join(
            plays(PRETRAIN_PLAYS)
            + [strip_line_numbers(read(src / MILTON / "paradiseregained.txt"))]
        ),
        "shakespeare_val.txt": "\n\n".join(plays(SHAKESPEARE_VAL)),
        "milton_val.txt": strip_line_numbers(read(src / MILTON / "paradiselost.txt")),
    }

    manifest = []
    for name, text in outputs.items():
        data = text.encode("utf-8")
        (out / name).write_bytes(data)
        manifest.append(f"{name} {len(data)} {hashlib.sha256(data).hexdigest()}")
    (out / "MANIFEST").write_text("\n".join(manifest) + "\n")
    print("\n".join(manifest))
    return 0


if __name__ == "__main__":
    sys.exit(main())
