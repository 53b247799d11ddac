"""Exact I(S;T) for small sentence distributions where T is a uniform
position permutation of S."""
import itertools
import math
from collections import Counter, defaultdict


def exact_mi(lang):
    joint = defaultdict(float)
    for s, ps in lang.items():
        toks = s.split()
        perms = list(itertools.permutations(toks))
        for p in perms:
            joint[(s, " ".join(p))] += ps / len(perms)
    pt = defaultdict(float)
    for (s, t), v in joint.items():
        pt[t] += v
    return sum(v * math.log2(v / (lang[s] * pt[t])) for (s, t), v in joint.items())


LANG_SWAP = {"a b": 0.9, "b a": 0.1}
LANG_RICH = {"a b": 0.4, "b a": 0.1, "a c": 0.2, "b c a": 0.2, "c a b": 0.1}

if __name__ == "__main__":
    print("swap", repr(exact_mi(LANG_SWAP)))
    print("rich", repr(exact_mi(LANG_RICH)))
