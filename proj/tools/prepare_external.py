#!/usr/bin/env python3
"""Convert raw TREC and MPQA files into label<TAB>text splits plus a manifest.

TREC: train_5500.label and TREC_10.label ("COARSE:fine question" per line).
Coarse labels map to 0 ABBR, 1 DESC, 2 ENTY, 3 HUM, 4 LOC, 5 NUM. The last
10% of a seeded shuffle of the training file becomes the validation split.

MPQA: one phrase per line in mpqa.pos and mpqa.neg (label 1 and 0). Without an
official split, a seeded shuffle is cut 80/10/10 into train, val and test.

Usage:
  prepare_external.py trec --train train_5500.label --test TREC_10.label --out data/external/trec
  prepare_external.py mpqa --pos mpqa.pos --neg mpqa.neg --out data/external/mpqa
"""

import argparse
import os
import random

TREC_LABELS = ["ABBR", "DESC", "ENTY", "HUM", "LOC", "NUM"]


def read_lines(path):
    with open(path, encoding="latin-1") as f:
        return [line.strip() for line in f if line.strip()]


def clean(text):
    return " ".join(text.replace("\t", " ").split())


def trec_rows(path):
    rows = []
    for line in read_lines(path):
        tag, text = line.split(" ", 1)
        rows.append((TREC_LABELS.index(tag.split(":")[0]), clean(text)))
    return rows


def write_split(out, name, rows):
    with open(os.path.join(out, name + ".tsv"), "w", encoding="utf-8") as f:
        for label, text in rows:
            f.write(f"{label}\t{text}\n")


def write_corpus(out, train, val, test):
    os.makedirs(out, exist_ok=True)
    write_split(out, "train", train)
    write_split(out, "val", val)
    write_split(out, "test", test)
    with open(os.path.join(out, "manifest.txt"), "w") as f:
        f.write("train = train.tsv\nval = val.tsv\ntest = test.tsv\n")
    print(f"{out}: train {len(train)}  val {len(val)}  test {len(test)}")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="corpus", required=True)
    t = sub.add_parser("trec")
    t.add_argument("--train", required=True)
    t.add_argument("--test", required=True)
    m = sub.add_parser("mpqa")
    m.add_argument("--pos", required=True)
    m.add_argument("--neg", required=True)
    for p in (t, m):
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)

    if args.corpus == "trec":
        train = trec_rows(args.train)
        rng.shuffle(train)
        cut = len(train) - len(train) // 10
        write_corpus(args.out, train[:cut], train[cut:], trec_rows(args.test))
    else:
        rows = [(1, clean(s)) for s in read_lines(args.pos)] + [(0, clean(s)) for s in read_lines(args.neg)]
        rng.shuffle(rows)
        a, b = int(len(rows) * 0.8), int(len(rows) * 0.9)
        write_corpus(args.out, rows[:a], rows[a:b], rows[b:])


if __name__ == "__main__":
    main()
