#!/usr/bin/env python3
"""Generate the synthetic six-class question corpus under data/questions.

The corpus is template-generated (not real data). It exists so the test
suite, the CLI examples and the perturbation harness have something small
and deterministic to run on. Labels:
0 ABBR, 1 DESC, 2 ENTY, 3 HUM, 4 LOC, 5 NUM.

Each template comes with a reordered variant used to build rewrites.tsv
(original<TAB>variant) for the word-order experiment.
"""

import argparse
import os
import random

PEOPLE = ["shakespeare", "einstein", "napoleon", "picasso", "newton", "lincoln", "darwin",
          "mozart", "gandhi", "edison", "galileo", "beethoven", "curie", "tesla", "homer",
          "cleopatra", "churchill", "dickens", "tolstoy", "plato"]
WORKS = ["hamlet", "the odyssey", "guernica", "the origin of species", "war and peace",
         "the republic", "oliver twist", "the magic flute", "the principia", "moonlight sonata"]
PLACES = ["france", "japan", "brazil", "egypt", "canada", "kenya", "peru", "norway", "india",
          "chile", "spain", "mexico", "italy", "greece", "china", "ireland"]
CITIES = ["paris", "tokyo", "cairo", "lima", "oslo", "rome", "madrid", "athens", "dublin",
          "nairobi", "delhi", "beijing"]
THINGS = ["the telephone", "penicillin", "the printing press", "the light bulb", "radar",
          "the compass", "gunpowder", "paper", "the steam engine", "the microscope"]
ANIMALS = ["dog", "cat", "horse", "eagle", "whale", "lion", "shark", "owl", "wolf", "frog"]
ABBRS = ["nasa", "fbi", "cpu", "dna", "laser", "scuba", "radar", "unicef", "nato", "html",
         "ufo", "aids", "gdp", "bbc"]
CONCEPTS = ["photosynthesis", "inflation", "gravity", "democracy", "evolution", "a black hole",
            "an eclipse", "a tsunami", "osmosis", "a recession", "a vaccine", "a comet"]
ATTRS = ["nickname", "real name", "birthday", "favorite food", "first job", "wife",
         "middle name", "hometown"]
UNITS = ["miles", "feet", "people", "years", "pounds", "degrees"]

# (template, variant) pairs; slots are filled identically in both.
TEMPLATES = {
    0: [("what does {abbr} stand for ?", "{abbr} stands for what ?"),
        ("what is the full form of {abbr} ?", "the full form of {abbr} is what ?"),
        ("what is {abbr} an abbreviation for ?", "{abbr} is an abbreviation for what ?"),
        ("what do the letters {abbr} mean ?", "the letters {abbr} mean what ?")],
    1: [("what is {concept} ?", "{concept} is what ?"),
        ("how does {concept} work ?", "{concept} works how ?"),
        ("why do people study {concept} ?", "people study {concept} why ?"),
        ("what causes {concept} ?", "{concept} is caused by what ?"),
        ("how would you describe {concept} ?", "{concept} would be described how ?")],
    2: [("what is {person} 's {attr} ?", "what is the {attr} of {person} ?"),
        ("what animal is {person} 's favorite ?", "the favorite animal of {person} is what ?"),
        ("what instrument did {person} play ?", "{person} played what instrument ?"),
        ("what did {person} invent ?", "{person} invented what ?"),
        ("what color is a {animal} 's fur ?", "the fur of a {animal} is what color ?"),
        ("what is the name of {person} 's {attr} ?", "the name of {person} 's {attr} is what ?")],
    3: [("who wrote {work} ?", "{work} was written by who ?"),
        ("who invented {thing} ?", "{thing} was invented by who ?"),
        ("who was the first king of {place} ?", "the first king of {place} was who ?"),
        ("who painted {work} ?", "{work} was painted by whom ?"),
        ("who discovered {thing} ?", "who was the discoverer of {thing} ?"),
        ("what person founded {city} ?", "{city} was founded by what person ?")],
    4: [("where is {city} ?", "{city} is where ?"),
        ("what country is {city} in ?", "{city} is in what country ?"),
        ("where was {person} born ?", "{person} was born where ?"),
        ("what is the capital of {place} ?", "the capital of {place} is what ?"),
        ("where do {animal}s live ?", "{animal}s live where ?")],
    5: [("how many {unit} is it from {city} to {city2} ?",
         "from {city} to {city2} is how many {unit} ?"),
        ("when was {person} born ?", "{person} was born when ?"),
        ("how old was {person} when he died ?", "when he died {person} was how old ?"),
        ("what year was {thing} invented ?", "{thing} was invented in what year ?"),
        ("how many people live in {place} ?", "in {place} how many people live ?"),
        ("how long does a {animal} live ?", "a {animal} lives how long ?")],
}


def fill(rng, pair):
    city, city2 = rng.sample(CITIES, 2)
    slots = dict(person=rng.choice(PEOPLE), work=rng.choice(WORKS), place=rng.choice(PLACES),
                 city=city, city2=city2, thing=rng.choice(THINGS), animal=rng.choice(ANIMALS),
                 abbr=rng.choice(ABBRS), concept=rng.choice(CONCEPTS), attr=rng.choice(ATTRS),
                 unit=rng.choice(UNITS))
    return pair[0].format(**slots), pair[1].format(**slots)


def sample(rng, n):
    rows = []
    for _ in range(n):
        label = rng.randrange(6)
        text, variant = fill(rng, rng.choice(TEMPLATES[label]))
        rows.append((label, text, variant))
    return rows


def write_tsv(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for label, text, _ in rows:
            f.write(f"{label}\t{text}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data",
                                                  "questions"))
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--train", type=int, default=1200)
    ap.add_argument("--val", type=int, default=200)
    ap.add_argument("--test", type=int, default=400)
    args = ap.parse_args()

    rng = random.Random(args.seed)
    os.makedirs(args.out, exist_ok=True)
    splits = {name: sample(rng, n) for name, n in
              (("train", args.train), ("val", args.val), ("test", args.test))}
    for name, rows in splits.items():
        write_tsv(os.path.join(args.out, f"{name}.tsv"), rows)
    with open(os.path.join(args.out, "manifest.txt"), "w", encoding="utf-8") as f:
        f.write("train = train.tsv\nval = val.tsv\ntest = test.tsv\n")

    # 50 distinct held-out sentences from each of ENTY (2) and HUM (3).
    picked, seen = [], set()
    for label in (2, 3):
        count = 0
        while count < 50:
            text, variant = fill(rng, rng.choice(TEMPLATES[label]))
            if text not in seen:
                seen.add(text)
                picked.append((label, text, variant))
                count += 1
    write_tsv(os.path.join(args.out, "perturb.tsv"), picked)
    with open(os.path.join(args.out, "rewrites.tsv"), "w", encoding="utf-8") as f:
        for _, text, variant in picked:
            f.write(f"{text}\t{variant}\n")


if __name__ == "__main__":
    main()
