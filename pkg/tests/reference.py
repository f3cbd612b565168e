"""Independent slow reference implementations used as test oracles.

Nothing here imports the package under test: kernels, class probabilities,
verification probabilities, scores and the variance formula are coded
directly from their definitions with explicit loops and dense triple
tensors.  Derivatives use complex-step differencing, so every model formula
below is written to accept complex arguments.
"""

import math

import numpy as np
from scipy.special import erfc


# -- kernel and VUS ----------------------------------------------------------------


def kernel(ti, tl, tr):
    if ti < tl < tr:
        return 1.0
    if ti == tl < tr or ti < tl == tr:
        return 0.5
    if ti == tl == tr:
        return 1.0 / 6.0
    return 0.0


def kernel_tensor(t):
    n = len(t)
    k = np.zeros((n, n, n))
    for i in range(n):
        for l in range(n):
            for r in range(n):
                k[i, l, r] = kernel(t[i], t[l], t[r])
    return k


def distinct_mask(n):
    idx = np.arange(n)
    return ((idx[:, None, None] != idx[None, :, None])
            & (idx[None, :, None] != idx[None, None, :])
            & (idx[:, None, None] != idx[None, None, :]))


def vus_triple(w, t):
    """Weighted VUS by explicit enumeration of ordered distinct triples."""
    n = len(t)
    num = []
    den = []
    for i in range(n):
        for l in range(n):
            if l == i:
                continue
            for r in range(n):
                if r == i or r == l:
                    continue
                p = w[i][0] * w[l][1] * w[r][2]
                num.append(p * kernel(t[i], t[l], t[r]))
                den.append(p)
    return math.fsum(num) / math.fsum(den)


# -- model pieces ---------------------------------------------------------------------


def cdf(link, x):
    if link == "logit":
        return 1.0 / (1.0 + np.exp(-x))
    return 0.5 * erfc(-x / math.sqrt(2.0))


def pdf(link, x):
    if link == "logit":
        p = 1.0 / (1.0 + np.exp(-x))
        return p * (1.0 - p)
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def rho1(eta, x):
    """Multinomial-logit class probabilities, class 3 reference."""
    q = x.shape[1]
    e1 = np.exp(x @ eta[:q])
    e2 = np.exp(x @ eta[q:])
    tot = 1.0 + e1 + e2
    return np.column_stack([e1 / tot, e2 / tot, 1.0 / tot])


def odds(link, x):
    # F(x) / F(-x) equals F / (1 - F) for symmetric links, without cancellation
    return cdf(link, x) / cdf(link, -x)


def rho0(r1, gamma, link, base):
    """Bayes-rule probabilities among unverified subjects (odds-ratio form)."""
    lam1, lam2 = gamma[-2], gamma[-1]
    R1 = odds(link, base + lam1) / odds(link, base)
    R2 = odds(link, base + lam2) / odds(link, base)
    den = r1[:, 0] * R2 + r1[:, 1] * R1 + r1[:, 2] * R1 * R2
    p1 = r1[:, 0] * R2 / den
    p2 = r1[:, 1] * R1 / den
    return np.column_stack([p1, p2, r1[:, 2] * R1 * R2 / den])


def bernoulli_score(link, v, z, x):
    """Z (v - F) F' / (F (1 - F))."""
    f = cdf(link, x)
    return z * ((v - f) * pdf(link, x) / (f * cdf(link, -x)))


class Problem:
    """Raw arrays of one dataset and the working-model layout."""

    def __init__(self, t, a_dis, a1, v, d, link):
        self.t = np.asarray(t, float)
        self.n = len(self.t)
        self.x = np.column_stack([np.ones(self.n), self.t, np.asarray(a_dis, float).reshape(self.n, -1)])
        self.zb = np.column_stack([np.ones(self.n), self.t, np.asarray(a1, float).reshape(self.n, -1)])
        self.v = np.asarray(v, int)
        self.d = np.asarray(d, int)  # 0 where unverified
        self.link = link
        self.q2 = 2 * self.x.shape[1]
        self.p = self.zb.shape[1] + 2

    def onehot(self):
        return np.column_stack([(self.d == k).astype(float) for k in (1, 2, 3)])

    def split(self, theta):
        return theta[: self.q2], theta[self.q2:]

    def psi(self, theta):
        """(n, q2 + p) stacked disease score (verified rows) and mean-score terms."""
        eta, gamma = self.split(theta)
        n = self.n
        r1 = rho1(eta, self.x)
        y = self.onehot()
        out = np.zeros((n, self.q2 + self.p), dtype=np.result_type(theta, float))
        base = self.zb @ gamma[:-2]
        r0 = rho0(r1, gamma, self.link, base)
        for i in range(n):
            if self.v[i] == 1:
                u = np.concatenate([(y[i, 0] - r1[i, 0]) * self.x[i], (y[i, 1] - r1[i, 1]) * self.x[i]])
                d1, d2 = y[i, 0], y[i, 1]
                z = np.concatenate([self.zb[i], [d1, d2]])
                s = bernoulli_score(self.link, 1, z, z @ gamma)
                out[i] = np.concatenate([u, s])
            else:
                s = np.zeros(self.p, dtype=out.dtype)
                for k, (d1, d2) in enumerate(((1, 0), (0, 1), (0, 0))):
                    z = np.concatenate([self.zb[i], [d1, d2]])
                    s += r0[i, k] * bernoulli_score(self.link, 0, z, z @ gamma)
                out[i, self.q2:] = s
        return out

    def weights(self, method, theta):
        eta, gamma = self.split(theta)
        r1 = rho1(eta, self.x)
        base = self.zb @ gamma[:-2]
        r0 = rho0(r1, gamma, self.link, base)
        y = self.onehot()
        v = self.v[:, None].astype(float)
        pi = cdf(self.link, base + y[:, 0] * gamma[-2] + y[:, 1] * gamma[-1])[:, None]
        if method == "FI":
            return v * r1 + (1 - v) * r0
        if method == "MSI":
            return v * y + (1 - v) * r0
        if method == "IPW":
            return v * y / pi
        if method == "PDR":
            return v * y / pi - r0 * (v - pi) / pi
        raise ValueError(method)


def cs_jacobian(f, x, h=1e-30):
    """Complex-step derivative of a real-analytic vector function."""
    x = np.asarray(x, float)
    cols = []
    for j in range(x.size):
        xc = x.astype(complex)
        xc[j] += 1j * h
        cols.append(np.imag(f(xc)) / h)
    return np.stack(cols, axis=-1)


def fd_jacobian(f, x, h=1e-6):
    """Central differences, for functions that are not complex-analytic."""
    x = np.asarray(x, float)
    cols = []
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        cols.append((f(x + e) - f(x - e)) / (2 * e[j]))
    return np.stack(cols, axis=-1)


def variance_reference(problem: Problem, method, theta):
    """Estimated VUS, sigma^2 and the per-subject Lambda, Q by direct formulas."""
    n = problem.n
    k = kernel_tensor(problem.t)
    mask = distinct_mask(n)

    def triple_weights(w):
        return w[:, 0][:, None, None] * w[:, 1][None, :, None] * w[:, 2][None, None, :] * mask

    w = problem.weights(method, theta)
    tw = triple_weights(w)
    mu = math.fsum((tw * k).ravel()) / math.fsum(tw.ravel())
    g = tw * (k - mu)  # G_ilr
    # subject i in position 1, 2 and 3
    lam = (g.sum(axis=(1, 2)) + g.sum(axis=(0, 2)) + g.sum(axis=(0, 1))) / ((n - 1) * (n - 2))

    def total_g(th):
        return np.array([np.sum(triple_weights(problem.weights(method, th)) * (k - mu))])

    dg = cs_jacobian(total_g, theta)[0]
    jac = cs_jacobian(lambda th: problem.psi(th).sum(axis=0), theta)
    psi = problem.psi(theta)
    # theta_hat - theta ~ -J^{-1} sum psi
    q = -(psi @ np.linalg.solve(jac.T, dg)) / ((n - 1) * (n - 2))
    prev = w.mean(axis=0)
    h = lam + q
    var = np.sum((h - h.mean()) ** 2) / (n - 1) / np.prod(prev) ** 2
    return mu, var, lam, q
