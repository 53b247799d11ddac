"""splitmix64 + Fisher-Yates reference. Prints permutations frozen into
test_textdata.cpp."""

MASK = (1 << 64) - 1


class SplitMix64:
    def __init__(self, seed):
        self.state = seed & MASK

    def next(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def uniform(self, bound):
        if bound <= 1:
            return 0
        threshold = ((1 << 64) - bound) % bound
        while True:
            r = self.next()
            if r >= threshold:
                return r % bound


def permutation(n, seed):
    perm = list(range(n))
    g = SplitMix64(seed)
    for i in range(n - 1, 0, -1):
        j = g.uniform(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


if __name__ == "__main__":
    print("first outputs seed 0:", [hex(x) for x in (lambda g: [g.next() for _ in range(3)])(SplitMix64(0))])
    for seed in range(1, 7):
        print("w1 w2 w3 seed", seed, [["w1", "w2", "w3"][i] for i in permutation(3, seed)])
    for seed in (1, 2, 42):
        print("n=8 seed", seed, permutation(8, seed))
