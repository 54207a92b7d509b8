"""Fast self-checks of the analytic oracles against brute-force references.

``csbo verify`` runs these and prints one line per check; the full property
suite lives in the test directory.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import oracle
from .basis import C_B, build_chebyshev, gram_matrix_1d
from .problems import build_quadratic, build_traffic
from .reduction import ReducedSbo
from .solver import SolverConfig, hypergradient, neumann_inverse_apply


def _rel(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))


def check_lower_gradients(seed: int) -> tuple[bool, str]:
    worst = 0.0
    for problem in (build_quadratic(3, 2, seed), build_traffic(seed)):
        s = problem.sample_joint(5, seed)
        x = problem.initial_x()
        y = problem.lower_solution(x, s.xi) if problem.exact_lower_solution else problem.solve_lower(x, s.xi)
        y = y + 0.05
        for i in range(len(s)):
            xi, eta = s.xi[i : i + 1], s.eta[i : i + 1]
            fd = oracle.finite_diff_gradient(lambda v: problem.g(x, v[None], xi, eta)[0], y[i], h=1e-6)
            worst = max(worst, _rel(problem.grad_g_y(x, y[i : i + 1], xi, eta)[0], fd))
    return worst <= 1e-4, f"max rel err {worst:.2e}"


def check_kronecker(seed: int) -> tuple[bool, str]:
    problem = build_quadratic(2, 3, seed)
    reduced = ReducedSbo(problem, build_chebyshev(1, 3, problem.domain))
    s = problem.sample_joint(20, seed)
    rng = np.random.default_rng(seed)
    x, W, V = rng.normal(size=2), rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    dense = reduced.dense_hess_WW(x, W, s.xi, s.eta) @ V.ravel()
    free = reduced.hess_gphi_WW_apply(x, W, s.xi, s.eta, V).ravel()
    err = float(np.max(np.abs(dense - free)))
    return err <= 1e-10, f"max abs err {err:.2e}"


def check_neumann(seed: int) -> tuple[bool, str]:
    problem = build_quadratic(3, 2, seed)
    reduced = ReducedSbo(problem, build_chebyshev(1, 3, problem.domain))
    b = reduced.batch(problem.sample_joint(200, seed))
    x, W = problem.initial_x(), reduced.zeros()
    H = reduced.dense_hess_WW(x, W, *b.args, phi=b.phi)
    s = 0.5 / np.linalg.eigvalsh(H)[-1]
    v = np.random.default_rng(seed).normal(size=reduced.w_shape)
    exact = np.linalg.solve(H, v.ravel())
    err = np.linalg.norm(neumann_inverse_apply(reduced, x, W, v, [b] * 200, s).ravel() - exact)
    err /= np.linalg.norm(exact)
    return err <= 1e-3, f"rel err at K=200: {err:.2e}"


def check_hypergradient(seed: int) -> tuple[bool, str]:
    problem = build_quadratic(3, 2, seed)
    reduced = ReducedSbo(problem, build_chebyshev(1, 4, problem.domain))
    samples = problem.sample_joint(300, seed)
    x = np.random.default_rng(seed).normal(size=3)
    W = oracle.solve_reduced_lower_exact(reduced, x, samples)
    h = hypergradient(reduced, x, W, reduced.batch(samples), SolverConfig(),
                      inverse_apply=oracle.dense_inverse(reduced, x, W, samples))
    err = _rel(h, oracle.quadratic_reduced_gradient(reduced, x, samples))
    return err <= 1e-6, f"rel err {err:.2e}"


def check_chebyshev_gram(seed: int) -> tuple[bool, str]:
    ratios = [np.linalg.eigvalsh(gram_matrix_1d(n))[0] * 32 * n / (np.pi - 1) for n in range(1, 17)]
    worst = float(min(ratios))
    return worst >= 1.0 - 1e-12 and C_B > 0, f"min lambda_min / (C_B / n) = {worst:.3f}"


CHECKS: dict[str, Callable[[int], tuple[bool, str]]] = {
    "lower-gradient finite differences": check_lower_gradients,
    "matrix-free Kronecker apply": check_kronecker,
    "Neumann inverse at K=200": check_neumann,
    "hypergradient with exact inverse": check_hypergradient,
    "Chebyshev Gram eigenvalue bound": check_chebyshev_gram,
}


def run_checks(seed: int = 0, echo: Callable[[str], None] = print) -> bool:
    """Run every check; True when all pass."""
    ok_all = True
    for name, check in CHECKS.items():
        try:
            ok, detail = check(seed)
        except Exception as err:  # report, do not abort the remaining checks
            ok, detail = False, f"{type(err).__name__}: {err}"
        ok_all &= ok
        echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok_all
