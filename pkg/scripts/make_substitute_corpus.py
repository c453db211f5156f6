#!/usr/bin/env python3
"""Generate the bundled synthetic tweet corpus (sentiment140 layout).

The public 1.6M-tweet corpus is too large to vendor and may be unavailable
offline, so the repository ships a 10,000-line synthetic substitute with a
similar shape: short noisy messages, URLs, @-mentions, a balanced binary
target in field 1 ({0, 4}), and sentiment carried by cue words with
deliberately imperfect class fidelity so classifiers top out well below
100%.  Regenerating with the same seed reproduces the file byte for byte.

Usage: python scripts/make_substitute_corpus.py [out.csv] [n] [seed]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from textcnn.tensor import Pcg32  # noqa: E402

POSITIVE = """
love loved great happy awesome amazing good best fun nice cool sweet thanks
excited win beautiful smile glad perfect yay wonderful enjoy laugh friends
sunshine delicious relax proud blessed fantastic brilliant chill winning
lovely superb cheerful rocking stoked delighted grateful epic neat
""".split()

NEGATIVE = """
hate hated awful sad terrible bad worst boring ugly annoying angry sick
tired fail failing cry crying lonely broken hurt miserable gross horrible
disappointed stressed upset worried ruined lost sucks mess depressing
painful dreadful nasty bummed whining grumpy exhausted unfair rotten
""".split()

NEUTRAL = """
i you we they he she it my your our just really going today tomorrow now
later home work school class lunch dinner coffee tea morning night weekend
monday friday sunday phone laptop game show movie song music book read
watch watching listen playing running walking driving bus train city town
rain sun weather week year time stuff thing things people everyone friend
still about again maybe almost right left new old big small long short
early late here there back out up down over under plan plans trip photo
video call text tweet post online update news story idea question answer
team match coach park street shop store market deal price money ticket
""".split()

USERS = ["sam", "alex", "jo", "max", "kim", "lee", "pat", "ray", "mel", "dee"]
URL_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789"


def pick(rng, seq):
    return seq[rng.bounded(len(seq))]


def make_text(rng, label):
    own = POSITIVE if label == 1 else NEGATIVE
    other = NEGATIVE if label == 1 else POSITIVE
    r = rng.bounded(10)
    n_cues = 1 if r < 5 else (2 if r < 8 else 3)
    cues = [
        pick(rng, own if rng.bounded(100) < 75 else other) for _ in range(n_cues)
    ]
    n_fill = 4 + rng.bounded(9)
    words = [pick(rng, NEUTRAL) for _ in range(n_fill)]
    for cue in cues:
        words.insert(rng.bounded(len(words) + 1), cue)
    if rng.bounded(100) < 10:
        words.insert(0, "@" + pick(rng, USERS) + str(rng.bounded(100)))
    if rng.bounded(100) < 8:
        tail = "".join(pick(rng, URL_CHARS) for _ in range(6))
        words.append("http://t.co/" + tail)
    text = " ".join(words)
    if rng.bounded(100) < 20:
        text += "!"
    return text


def main(out="data/substitute_tweets_10k.csv", n=10000, seed=20240501):
    rng = Pcg32(int(seed), 0)
    lines = []
    for i in range(int(n)):
        label = rng.bounded(2)
        text = make_text(rng, label)
        target = "4" if label == 1 else "0"
        user = pick(rng, USERS) + str(i % 97)
        lines.append(
            f'"{target}","{1467810000 + i}","Sat May 16 23:58:44 UTC 2009",'
            f'"NO_QUERY","{user}","{text}"'
        )
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    print(f"wrote {n} lines to {out}")


if __name__ == "__main__":
    main(*sys.argv[1:])
