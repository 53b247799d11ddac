# split R-hat and bulk ESS (Stan's estimator) on deterministic AR(1) chains
import numpy as np

def chains(n, m, phi, offset):
    x = np.zeros((n, m))
    for c in range(m):
        state = 12345 + 977 * c
        prev = 0.0
        for t in range(n):
            state = (1103515245 * state + 12345) % (1 << 31)
            e = state / float(1 << 31) - 0.5
            prev = phi * prev + e
            x[t, c] = prev + offset * c
    return x

def split(x):
    h = x.shape[0] // 2
    return np.concatenate([x[:h], x[h:2 * h]], axis=1)

def rhat(x):
    s = split(x)
    n = s.shape[0]
    means = s.mean(axis=0)
    w = s.var(axis=0, ddof=1).mean()
    b = n * means.var(ddof=1)
    return np.sqrt(((n - 1) / n * w + b / n) / w)

def autocov(v):
    n = len(v)
    v = v - v.mean()
    return np.array([np.dot(v[:n - k], v[k:]) / n for k in range(n)])

def ess(x):
    s = split(x)
    n, m = s.shape
    acov = np.stack([autocov(s[:, c]) for c in range(m)], axis=1)
    means = s.mean(axis=0)
    w = (acov[0] * n / (n - 1)).mean()
    var_plus = w * (n - 1) / n + means.var(ddof=1)
    rho = np.zeros(n + 2)
    rho_at = lambda k: 1 - (w - acov[k].mean()) / var_plus
    even, odd = 1.0, rho_at(1)
    rho[0], rho[1] = even, odd
    t = 1
    while t < n - 4 and even + odd > 0:
        even, odd = rho_at(t + 1), rho_at(t + 2)
        if even + odd >= 0:
            rho[t + 1], rho[t + 2] = even, odd
        t += 2
    max_t = t
    if even > 0:
        rho[max_t + 1] = even
    for k in range(1, max_t - 2, 2):
        if rho[k + 1] + rho[k + 2] > rho[k - 1] + rho[k]:
            rho[k + 1] = rho[k + 2] = (rho[k - 1] + rho[k]) / 2
    tau = -1 + 2 * rho[:max_t].sum() + rho[max_t + 1]
    total = n * m
    return min(total / tau, total * np.log10(total))

for phi, offset in [(0.0, 0.0), (0.5, 0.0), (0.9, 0.0), (-0.6, 0.0), (0.3, 0.5)]:
    x = chains(200, 4, phi, offset)
    print(f"phi={phi} offset={offset} rhat={rhat(x)!r} ess={ess(x)!r}")
