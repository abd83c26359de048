"""Independent reference implementations used to cross-check the package.

None of these import the code they check; they recompute results from first
principles so a shared bug cannot hide in both routes.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def joint_equilibrium_forces(nodes, members, supports, loads):
    """Member axial forces (tension positive) of a statically determinate truss
    from the equilibrium equations of every unrestrained degree of freedom.

    nodes: {id: (x, y)}; members: [(a, b)]; supports: {id: (fix_x, fix_y)};
    loads: {id: (fx, fy)}.
    """
    rows = []
    rhs = []
    for nid, (x, y) in nodes.items():
        fix = supports.get(nid, (False, False))
        for axis in (0, 1):
            if fix[axis]:
                continue
            row = []
            for a, b in members:
                if nid not in (a, b):
                    row.append(0.0)
                    continue
                other = b if nid == a else a
                ox, oy = nodes[other]
                length = math.hypot(ox - x, oy - y)
                # tension pulls the joint toward the other end
                row.append(((ox - x) if axis == 0 else (oy - y)) / length)
            rows.append(row)
            rhs.append(-loads.get(nid, (0.0, 0.0))[axis])
    A = np.array(rows)
    if A.shape[0] != A.shape[1] or abs(np.linalg.det(A)) < 1e-12:
        raise ValueError("fixture is not statically determinate")
    return np.linalg.solve(A, np.array(rhs))


def gaussian_pdf_2d(p, c, sigma):
    d2 = (p[0] - c[0]) ** 2 + (p[1] - c[1]) ** 2
    return math.exp(-d2 / (2 * sigma * sigma)) / (2 * math.pi * sigma * sigma)


def density_oracle(params, centers, sigma):
    """Best-assignment product of isotropic Gaussian densities, in plain Python."""
    pts = [(params[2 * i], params[2 * i + 1]) for i in range(len(params) // 2)]
    best = 0.0
    for perm in itertools.permutations(range(len(centers))):
        prod = 1.0
        for i, j in enumerate(perm):
            prod *= gaussian_pdf_2d(pts[i], centers[j], sigma)
        best = max(best, prod)
    return best


def log_density_oracle(params, centers, sigma):
    pts = [(params[2 * i], params[2 * i + 1]) for i in range(len(params) // 2)]
    best = -math.inf
    for perm in itertools.permutations(range(len(centers))):
        total = 0.0
        for i, j in enumerate(perm):
            d2 = (pts[i][0] - centers[j][0]) ** 2 + (pts[i][1] - centers[j][1]) ** 2
            total += -d2 / (2 * sigma * sigma) - math.log(2 * math.pi * sigma * sigma)
        best = max(best, total)
    return best


def standard_error(values):
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var) / math.sqrt(n)


def brute_force_nearest(pred, actions):
    best, best_d = None, math.inf
    for i, a in enumerate(actions):
        d = math.sqrt(sum((p - q) ** 2 for p, q in zip(pred, a.params)))
        if d < best_d:
            best, best_d = i, d
    return best, best_d


def central_difference_check(fn, params, n_samples, rng, step=1e-5):
    """Compare autograd gradients of scalar ``fn()`` with central differences on
    ``n_samples`` randomly chosen scalar entries of ``params`` (float64 tensors).

    Returns the worst relative error.
    """
    import torch

    for p in params:
        p.grad = None
    fn().backward()
    analytic = [p.grad.detach().clone() for p in params]
    sizes = np.array([p.numel() for p in params])
    worst = 0.0
    for _ in range(n_samples):
        t = int(rng.choice(len(params), p=sizes / sizes.sum()))
        k = int(rng.integers(sizes[t]))
        flat = params[t].data.view(-1)
        orig = flat[k].item()
        with torch.no_grad():
            flat[k] = orig + step
            up = fn().item()
            flat[k] = orig - step
            down = fn().item()
            flat[k] = orig
        numeric = (up - down) / (2 * step)
        exact = analytic[t].view(-1)[k].item()
        scale = max(abs(numeric), abs(exact), 1e-6)
        worst = max(worst, abs(numeric - exact) / scale)
    return worst
