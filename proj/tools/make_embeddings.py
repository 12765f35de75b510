#!/usr/bin/env python3
"""Writes the two static embedding tables used by the dense presets.

No pretrained vectors ship with the repository, so each table is synthetic:
words of one semantic category share a random centroid and get per-word
noise, and every other token of the corpus gets an independent random
vector. Output is deterministic for a given seed.

usage: make_embeddings.py NLU_JSON OUT_FILE --dim D --seed S --noise N
"""

import argparse
import json
import re

import numpy as np

CATEGORIES = {
    "greeting": "hi hello hey morning evening afternoon vanakkam namaste greetings welcome",
    "farewell": "bye goodbye night later leaving soon tomorrow care signing off go",
    "gratitude": "thanks thank thx appreciated nandri grateful helpful useful great super",
    "crop": "paddy rice tomato tomatoes brinjal eggplant sugarcane groundnut peanut cotton banana grapes maize corn "
            "wheat millet sorghum chilli onion potato mango coconut turmeric",
    "disease": "blast blight spot rot smut rust wilt curl mildew sigatoka borer bollworm whitefly armyworm aphid "
               "mite thrips disease pest pests infection fungus pustules",
    "disease_qualifier": "leaf sheath brown early late bacterial red panama downy powdery stem shoot fall",
    "nutrient": "zinc nitrogen potassium phosphorus iron boron calcium magnesium sulphur potash urea",
    "fertilizer": "fertilizer fertiliser deficiency deficient lacks needs shortage chlorosis dose supply yellow nutrient",
    "remedy": "spray control treat remedy cure manage prevent pesticide apply fungicide what should",
    "role": "officer agriculture agricultural horticulture assistant director extension",
    "contact": "contact phone number email mail call reach meet details connect whom",
    "city": "madurai salem coimbatore trichy thanjavur chennai erode tirunelveli vellore",
    "off_topic": "capital france cricket match joke weather london movie ticket music film minister japan cook biryani "
                 "mobile time york sing song python programming hamlet translate french price gold moon pizza "
                 "bitcoin football won wrote favourite recommend order",
}


def corpus_tokens(path):
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    tokens = set()
    for ex in data["examples"]:
        tokens.update(re.findall(r"\w+", ex["text"].lower()))
    return tokens


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("nlu")
    ap.add_argument("out")
    ap.add_argument("--dim", type=int, required=True)
    ap.add_argument("--seed", type=int, required=True)
    ap.add_argument("--noise", type=float, default=0.3)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    vectors = {}
    for name in sorted(CATEGORIES):
        centroid = rng.normal(size=args.dim)
        centroid /= np.linalg.norm(centroid)
        for word in sorted(set(CATEGORIES[name].split())):
            vectors.setdefault(word, centroid + args.noise * rng.normal(size=args.dim) / np.sqrt(args.dim))
    for word in sorted(corpus_tokens(args.nlu) - set(vectors)):
        v = rng.normal(size=args.dim)
        vectors[word] = 0.5 * v / np.linalg.norm(v)

    with open(args.out, "w", encoding="utf-8") as f:
        for word in sorted(vectors):
            f.write(word + " " + " ".join(f"{x:.6f}" for x in vectors[word]) + "\n")


if __name__ == "__main__":
    main()
