"""Non-neural reference predictors plus the gradient-descent iterate
references used by the probing comparison.

Every predictor consumes a context (X: (k, d), y: (k,)) and query inputs
and emits scalar predictions; all are deterministic given (context,
config, seed).
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, param
from .errors import ConfigError
from .optim import Adam

LASSO_LAMBDA_DEFAULT = 0.01
BOOST_ROUNDS = 50
BOOST_DEPTH = 4
BOOST_LR = 0.1
GREEDY_TREE_DEPTH = 2
KNN_K = 3


def least_squares_fit(X, y):
    """Minimum-norm ordinary least squares (rank-revealing SVD solve)."""
    return np.linalg.lstsq(X, y, rcond=None)[0]


def predict_least_squares(X, y, Xq):
    return np.atleast_2d(Xq) @ least_squares_fit(X, y)


def lasso_fit(X, y, lam=LASSO_LAMBDA_DEFAULT, tol=1e-8, max_iter=100_000):
    """Coordinate descent for 0.5||y - Xw||^2 + lam ||w||_1, iterated to a
    duality gap below tol (or max_iter sweeps)."""
    if lam < 0:
        raise ConfigError("lasso: lambda must be >= 0")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    k, d = X.shape
    w = np.zeros(d)
    col_sq = np.einsum("ij,ij->j", X, X)
    r = y.copy()  # residual y - Xw
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            rho = X[:, j] @ r + col_sq[j] * w[j]
            new = np.sign(rho) * max(abs(rho) - lam, 0.0) / col_sq[j]
            if new != w[j]:
                r += X[:, j] * (w[j] - new)
                max_delta = max(max_delta, abs(new - w[j]))
                w[j] = new
        if _duality_gap(X, y, w, r, lam) <= tol:
            break
    return w


def _duality_gap(X, y, w, r, lam):
    if lam == 0.0:
        # plain least squares: stop on the gradient sup-norm instead
        return np.abs(X.T @ r).max()
    # dual point: residual scaled into the l-infinity feasible set
    primal = 0.5 * r @ r + lam * np.abs(w).sum()
    corr = np.abs(X.T @ r).max()
    scale = 1.0 if corr <= lam else lam / corr
    theta = r * scale
    dual = 0.5 * (y @ y) - 0.5 * ((theta - y) @ (theta - y))
    return primal - dual


def predict_knn(X, y, Xq, k=KNN_K):
    """Mean target of the k context points closest in euclidean distance;
    ties broken by lowest index (stable sort)."""
    Xq = np.atleast_2d(Xq)
    out = np.empty(len(Xq))
    kk = min(k, len(X))
    for i, xq in enumerate(Xq):
        dist = np.linalg.norm(X - xq, axis=1)
        nearest = np.argsort(dist, kind="stable")[:kk]
        out[i] = y[nearest].mean()
    return out


def predict_averaging(X, y, Xq):
    """w_hat = mean of x_i y_i; predicts w_hat . x_query."""
    w = (X * y[:, None]).mean(axis=0)
    return np.atleast_2d(Xq) @ w


# -- trees -------------------------------------------------------------------------


def _best_split(X, y, idx):
    """Exact variance-reduction split over axis-aligned thresholds.
    Returns (feature, threshold, sse_gain) or None."""
    best = None
    n = len(idx)
    if n < 2:
        return None
    ysub = y[idx]
    base = ((ysub - ysub.mean()) ** 2).sum()
    for j in range(X.shape[1]):
        order = np.argsort(X[idx, j], kind="stable")
        xs = X[idx[order], j]
        ys = ysub[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        total, total_sq = csum[-1], csq[-1]
        for split in range(1, n):
            if xs[split] == xs[split - 1]:
                continue
            nl = split
            nr = n - split
            sl = csq[split - 1] - csum[split - 1] ** 2 / nl
            sr = (total_sq - csq[split - 1]) - (total - csum[split - 1]) ** 2 / nr
            gain = base - sl - sr
            if best is None or gain > best[2] + 1e-15:
                best = (j, 0.5 * (xs[split] + xs[split - 1]), gain)
    return best


class RegressionTree:
    """Greedy CART regressor with exact SSE splits, depth-limited."""

    def __init__(self, max_depth):
        self.max_depth = max_depth
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self._grow(X, y, np.arange(len(y)), depth=0)
        return self

    def _grow(self, X, y, idx, depth):
        node = len(self.value)
        for lst in (self.feature, self.threshold, self.left, self.right):
            lst.append(-1)
        self.value.append(y[idx].mean())
        if depth >= self.max_depth:
            return node
        split = _best_split(X, y, idx)
        if split is None or split[2] <= 1e-12:
            return node
        j, thr, _ = split
        mask = X[idx, j] <= thr
        self.feature[node] = j
        self.threshold[node] = thr
        self.left[node] = self._grow(X, y, idx[mask], depth + 1)
        self.right[node] = self._grow(X, y, idx[~mask], depth + 1)
        return node

    def predict(self, Xq):
        Xq = np.atleast_2d(Xq)
        out = np.empty(len(Xq))
        for i, x in enumerate(Xq):
            node = 0
            while self.feature[node] >= 0:
                node = self.left[node] if x[self.feature[node]] <= self.threshold[node] else self.right[node]
            out[i] = self.value[node]
        return out


def predict_greedy_tree(X, y, Xq, max_depth=GREEDY_TREE_DEPTH):
    return RegressionTree(max_depth).fit(X, y).predict(Xq)


class BoostedTrees:
    """Squared-loss gradient boosting: depth-4 trees fit to residuals with
    shrinkage, starting from the target mean."""

    def __init__(self, rounds=BOOST_ROUNDS, depth=BOOST_DEPTH, lr=BOOST_LR):
        self.rounds = rounds
        self.depth = depth
        self.lr = lr
        self.init = 0.0
        self.trees = []

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.init = y.mean()
        pred = np.full(len(y), self.init)
        for _ in range(self.rounds):
            tree = RegressionTree(self.depth).fit(X, y - pred)
            pred += self.lr * tree.predict(X)
            self.trees.append(tree)
        return self

    def predict(self, Xq):
        out = np.full(len(np.atleast_2d(Xq)), self.init)
        for tree in self.trees:
            out += self.lr * tree.predict(Xq)
        return out

    def staged_train_mse(self, X, y):
        pred = np.full(len(y), self.init)
        mses = []
        for tree in self.trees:
            pred += self.lr * tree.predict(X)
            mses.append(float(((pred - y) ** 2).mean()))
        return mses


def predict_boosted_trees(X, y, Xq, rounds=BOOST_ROUNDS, depth=BOOST_DEPTH, lr=BOOST_LR):
    return BoostedTrees(rounds, depth, lr).fit(X, y).predict(Xq)


# -- 2-layer network trained on the context ------------------------------------------


def predict_nn2_gd(X, y, Xq, r=100, steps=500, lr=5e-2, seed=0):
    """Width-r 2-layer ReLU network fit to the context with Adam."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x22)))
    d = X.shape[1]
    w1 = param(rng.standard_normal((d, r)) / np.sqrt(d))
    b1 = param(np.zeros(r))
    w2 = param(rng.standard_normal((r, 1)) * np.sqrt(2.0 / r))
    b2 = param(np.zeros(1))
    params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    opt = Adam(params, lr=lr)
    Xt = Tensor(X)
    yt = Tensor(y.reshape(-1, 1))
    for _ in range(steps):
        opt.zero_grad()
        pred = ad.relu(Xt @ w1 + b1) @ w2 + b2
        loss = ((pred - yt) ** 2).mean()
        backward(loss)
        opt.step()
    with ad.no_grad():
        out = ad.relu(Tensor(np.atleast_2d(Xq)) @ w1 + b1) @ w2 + b2
    return out.data[:, 0]


def nn2_train_mse(X, y, r=100, steps=500, lr=5e-2, seed=0):
    pred = predict_nn2_gd(X, y, X, r=r, steps=steps, lr=lr, seed=seed)
    return float(((pred - y) ** 2).mean())


# -- gradient-descent references ------------------------------------------------------


def _gd_step_size(X):
    """Theoretically optimal 2/(L + mu) for the quadratic 1/(2k)||Xw - y||^2;
    L, mu are the extreme eigenvalues of the empirical covariance X^T X / k.
    A rank-deficient covariance uses its smallest nonzero eigenvalue."""
    k = len(X)
    eig = np.linalg.eigvalsh(X.T @ X / k)
    L = eig[-1]
    tol = max(L, 1.0) * 1e-12
    nonzero = eig[eig > tol]
    mu = nonzero[0] if len(nonzero) else L
    return 2.0 / (L + mu)


def gd_iterates(X, y, Xq, steps):
    """Full-batch GD on 1/(2k)||Xw - y||^2 from w = 0 with the optimal
    constant step; returns predictions on Xq after each iteration,
    shape (steps, len(Xq))."""
    if steps < 1:
        raise ConfigError("gd needs steps >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    k = len(X)
    eta = _gd_step_size(X)
    w = np.zeros(X.shape[1])
    preds = np.empty((steps, len(Xq)))
    for t in range(steps):
        w = w - (eta / k) * (X.T @ (X @ w - y))
        preds[t] = Xq @ w
    return preds


def gd_pp_iterates(X, y, Xq, steps, gamma):
    """GD++: precondition inputs by (I - gamma X^T X) computed from the
    context (columns-of-x convention: X X^T on stacked column vectors),
    applied to context and query alike, then run gd_iterates."""
    if gamma < 0:
        raise ConfigError("gd++ needs gamma >= 0")
    X = np.asarray(X, dtype=float)
    T = np.eye(X.shape[1]) - gamma * (X.T @ X)
    return gd_iterates(X @ T.T, y, np.atleast_2d(Xq) @ T.T, steps)


def gd_train_losses(X, y, steps):
    """Training objective value after each GD iteration (monotonicity checks)."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    k = len(X)
    eta = _gd_step_size(X)
    w = np.zeros(X.shape[1])
    losses = []
    for _ in range(steps):
        w = w - (eta / k) * (X.T @ (X @ w - y))
        losses.append(float(0.5 / k * np.sum((X @ w - y) ** 2)))
    return losses


def gamma_grid_search(tasks, steps, grid=None):
    """Pick gamma minimizing the mean squared query error of GD++ at the
    final iteration across tasks. Returns (best_gamma, table rows)."""
    if grid is None:
        grid = np.logspace(-5, -2, 10)
    rows = []
    for gamma in grid:
        errs = []
        for t in tasks:
            X, y = t.context()
            xq, yq = t.query()
            pred = gd_pp_iterates(X, y, xq[None, :], steps, gamma)[-1, 0]
            errs.append((pred - yq) ** 2)
        rows.append((float(gamma), float(np.mean(errs))))
    best = min(rows, key=lambda r: r[1])[0]
    return best, rows


# -- registry --------------------------------------------------------------------------


def predict_zero(X, y, Xq):
    return np.zeros(len(np.atleast_2d(Xq)))


BASELINES = {
    "zero": predict_zero,
    "least_squares": predict_least_squares,
    "lasso": lambda X, y, Xq: np.atleast_2d(Xq) @ lasso_fit(X, y),
    "knn3": predict_knn,
    "averaging": predict_averaging,
    "nn2_gd": predict_nn2_gd,
    "greedy_tree": predict_greedy_tree,
    "boosted_trees": predict_boosted_trees,
    "gd": lambda X, y, Xq, steps=24: gd_iterates(X, y, Xq, steps)[-1],
    "gd_pp": lambda X, y, Xq, steps=24, gamma=2e-4: gd_pp_iterates(X, y, Xq, steps, gamma)[-1],
}
