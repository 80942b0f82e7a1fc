"""Reference computations that share no code with the package."""

import itertools

import numpy as np

MU0 = 4e-7 * np.pi


# -- quadrature ------------------------------------------------------------------

def duffy_rule(p0, p1, p2, n=6):
    """Collapsed (Duffy) Gauss-Legendre rule on a triangle; exact to degree 2n - 2."""
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    U, V = np.meshgrid(x, x, indexing="ij")
    WU, WV = np.meshgrid(w, w, indexing="ij")
    # (u, v) in the square -> (s, t) = (u, v (1 - u)) in the reference triangle
    s, t = U.ravel(), (V * (1.0 - U)).ravel()
    wt = (WU * WV * (1.0 - U)).ravel()
    p0, p1, p2 = (np.asarray(p, dtype=float) for p in (p0, p1, p2))
    pts = p0 + s[:, None] * (p1 - p0) + t[:, None] * (p2 - p0)
    jac = abs((p1 - p0)[0] * (p2 - p0)[1] - (p1 - p0)[1] * (p2 - p0)[0])
    return pts, wt * jac


def element_matrix_oracle(p0, p1, p2, n=6):
    """int_T (1/(mu0 r)) grad v_i . grad v_j via a degree-10 Duffy rule."""
    P = np.array([p0, p1, p2], dtype=float)
    # affine hat functions: solve [1 r z] c = e_i
    V = np.column_stack([np.ones(3), P])
    coef = np.linalg.solve(V, np.eye(3))
    grads = coef[1:].T  # (3, 2)
    pts, w = duffy_rule(p0, p1, p2, n)
    weight = np.sum(w / (MU0 * pts[:, 0]))
    return weight * grads @ grads.T


def triangle_integral(f, p0, p1, p2, n=8):
    pts, w = duffy_rule(p0, p1, p2, n)
    return float(np.sum(w * f(pts[:, 0], pts[:, 1])))


def hat_values(P, pts):
    """Values of the three affine hats of triangle P at points."""
    V = np.column_stack([np.ones(3), P])
    coef = np.linalg.solve(V, np.eye(3))
    return np.column_stack([np.ones(len(pts)), pts]) @ coef


# -- B-splines -------------------------------------------------------------------

def cox_de_boor(t, i, k, x):
    """Value of the i-th B-spline of degree k on knots t at x (right-continuous,
    with the last non-empty interval closed on the right)."""
    if k == 0:
        last = t[-1]
        if t[i] <= x < t[i + 1]:
            return 1.0
        if x == last and t[i] < t[i + 1] == last:
            return 1.0
        return 0.0
    out = 0.0
    if t[i + k] > t[i]:
        out += (x - t[i]) / (t[i + k] - t[i]) * cox_de_boor(t, i, k - 1, x)
    if t[i + k + 1] > t[i + 1]:
        out += (t[i + k + 1] - x) / (t[i + k + 1] - t[i + 1]) * cox_de_boor(t, i + 1, k - 1, x)
    return out


def cox_de_boor_derivative(t, i, k, x, order):
    if order == 0:
        return cox_de_boor(t, i, k, x)
    out = 0.0
    if t[i + k] > t[i]:
        out += k / (t[i + k] - t[i]) * cox_de_boor_derivative(t, i, k - 1, x, order - 1)
    if t[i + k + 1] > t[i + 1]:
        out -= k / (t[i + k + 1] - t[i + 1]) * cox_de_boor_derivative(t, i + 1, k - 1, x, order - 1)
    return out


def clamped_cubic_knots(m):
    inner = np.linspace(0.0, 1.0, m - 2)
    return np.concatenate([[0.0] * 3, inner, [1.0] * 3])


def curvature_gram_oracle(m, n_fine=4000):
    """int_0^1 B_i'' B_j'' dx by a fine composite Simpson rule on each knot span."""
    t = clamped_cubic_knots(m)
    spans = np.unique(t)
    G = np.zeros((m, m))
    for a, b in zip(spans[:-1], spans[1:]):
        # B'' is linear on a span, so Simpson on the open interior is exact;
        # stay off the endpoints to avoid the one-sided convention
        xs = np.linspace(a, b, 2 * (n_fine // len(spans)) + 1)
        eps = 1e-13 * (b - a)
        xs[0] += eps
        xs[-1] -= eps
        vals = np.array([[cox_de_boor_derivative(t, i, 3, x, 2) for i in range(m)] for x in xs])
        h = (xs[-1] - xs[0]) / (len(xs) - 1)
        w = np.ones(len(xs))
        w[1:-1:2], w[2:-1:2] = 4.0, 2.0
        w *= h / 3.0
        G += vals.T @ (w[:, None] * vals)
    return G


# -- brute-force minimisation ----------------------------------------------------

def grid_zoom_minimize(J, center, half_width, points=9, rounds=60, shrink=0.5):
    """Minimise J on a tensor grid around `center`, re-centre, shrink, repeat."""
    center = np.asarray(center, dtype=float)
    half = np.full_like(center, float(half_width)) if np.ndim(half_width) == 0 else np.asarray(half_width, float)
    offsets = np.linspace(-1.0, 1.0, points)
    grid = np.array(list(itertools.product(offsets, repeat=center.size)))
    for _ in range(rounds):
        cand = center + grid * half
        vals = np.array([J(c) for c in cand])
        center = cand[int(np.argmin(vals))]
        half = half * shrink
    return center


def grid_zoom_least_squares(A, b, center, half_width, points=9, rounds=80, shrink=0.5):
    """Brute-force minimiser of 1/2 |A u - b|^2 by grid zooming.

    Candidates are ranked by J(cand) - J(center), evaluated as
    1/2 (A d) . (2 r + A d) with r the centre residual, so the ranking stays
    resolvable far below sqrt(machine eps).
    """
    A, b = np.asarray(A, float), np.asarray(b, float)
    center = np.asarray(center, dtype=float)
    half = float(half_width)
    offsets = np.linspace(-1.0, 1.0, points)
    grid = np.array(list(itertools.product(offsets, repeat=center.size)))
    for _ in range(rounds):
        r = A @ center - b
        D = grid * half
        AD = D @ A.T
        dJ = 0.5 * np.einsum("ki,ki->k", AD, 2.0 * r[None, :] + AD)
        center = center + D[int(np.argmin(dJ))]
        half *= shrink
    return center


# -- mesh graph ------------------------------------------------------------------

def flood_fill_oracle(triangles, seed, allowed):
    """Triangles reachable from `seed` across shared edges, staying in `allowed`."""
    by_edge = {}
    for t, tri in enumerate(triangles):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            by_edge.setdefault(frozenset((int(a), int(b))), []).append(t)
    seen = {seed} if allowed[seed] else set()
    frontier = list(seen)
    while frontier:
        t = frontier.pop()
        tri = triangles[t]
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            for u in by_edge[frozenset((int(a), int(b)))]:
                if u not in seen and allowed[u]:
                    seen.add(u)
                    frontier.append(u)
    return seen


def p1_dense_samples(nodes, triangles, values, per_edge=12):
    """Points and P1-interpolated values on a barycentric lattice in every triangle."""
    k = per_edge
    bary = np.array([(i / k, j / k, 1 - (i + j) / k) for i in range(k + 1) for j in range(k + 1 - i)])
    P = nodes[triangles]  # (T, 3, 2)
    pts = np.einsum("bk,tkd->tbd", bary, P).reshape(-1, 2)
    vals = np.einsum("bk,tk->tb", bary, values[triangles]).ravel()
    return pts, vals
