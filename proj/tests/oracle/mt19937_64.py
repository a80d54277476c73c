"""Reference mt19937_64 plus the bounded/partial-shuffle rules of
tangles::Rng, used to freeze the pinned sampling draws in the tests."""
import sys

MASK = (1 << 64) - 1


class MT64:
    def __init__(self, seed):
        self.mt = [0] * 312
        self.mt[0] = seed & MASK
        for i in range(1, 312):
            self.mt[i] = (6364136223846793005 * (self.mt[i - 1] ^ (self.mt[i - 1] >> 62)) + i) & MASK
        self.i = 312

    def next(self):
        if self.i >= 312:
            for k in range(312):
                x = (self.mt[k] & 0xFFFFFFFF80000000) | (self.mt[(k + 1) % 312] & 0x7FFFFFFF)
                xa = x >> 1
                if x & 1:
                    xa ^= 0xB5026F5AA96619E9
                self.mt[k] = self.mt[(k + 156) % 312] ^ xa
            self.i = 0
        y = self.mt[self.i]
        self.i += 1
        y ^= (y >> 29) & 0x5555555555555555
        y ^= (y << 17) & 0x71D67FFFEDA60000
        y ^= (y << 37) & 0xFFF7EEE000000000
        y ^= y >> 43
        return y & MASK

    def bounded(self, n):
        limit = MASK - (MASK % n + 1) % n
        while True:
            x = self.next()
            if x <= limit:
                return x % n


def partial_shuffle(rng, items, k):
    items = list(items)
    for i in range(k):
        j = i + rng.bounded(len(items) - i)
        items[i], items[j] = items[j], items[i]
    return items[:k]


if __name__ == "__main__":
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 2025
    r = MT64(seed)
    print(partial_shuffle(r, [f"a{i}" for i in range(10)], 3))
