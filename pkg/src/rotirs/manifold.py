"""Conjugate-gradient ascent on the product of complex circles.

Points are complex vectors with unit-modulus entries.  Only the objective
``f(v) = v^H Q v + 2 Re{q^H v}`` with Hermitian negative-semidefinite ``Q``
is needed, so the module is specialised to it rather than being a general
manifold toolbox.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class StepRejected(ArithmeticError):
    """A retraction would divide by a (numerically) zero modulus."""


@dataclass(frozen=True)
class QuadraticObjective:
    Q: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q)
        if np.linalg.norm(Q - Q.conj().T) > 1e-9 * max(1.0, np.linalg.norm(Q)):
            raise ValueError("Q must be Hermitian")

    def value(self, v):
        return float(np.real(np.vdot(v, self.Q @ v)) + 2 * np.real(np.vdot(self.q, v)))

    def egrad(self, v):
        return 2 * (self.Q @ v) + 2 * self.q

    def is_nsd(self, tol=1e-9):
        return bool(np.linalg.eigvalsh(self.Q).max() <= tol * max(1.0, np.abs(self.Q).max()))


def tangent_project(v, g):
    """Remove the radial component: ``g - Re{g * conj(v)} v``."""
    return g - np.real(g * np.conj(v)) * v


def retract(v, t):
    z = v + t
    mod = np.abs(z)
    if np.any(mod < 1e-14):
        raise StepRejected("retraction through the origin")
    return z / mod


def retract_with_step(v, t):
    """``retract(v, t)`` together with ``retract(v, t) - v`` free of cancellation."""
    z = v + t
    mod = np.abs(z)
    if np.any(mod < 1e-14):
        raise StepRejected("retraction through the origin")
    # 1 - |z| = -(2 Re{conj(v) t} + |t|^2) / (1 + |z|) for unit-modulus v
    shrink = (2 * np.real(np.conj(v) * t) + np.abs(t) ** 2) / (1 + mod)
    return z / mod, (t - v * shrink) / mod


def random_phases(n, rng):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, n))


@dataclass
class RCGResult:
    v: np.ndarray
    value: float
    iterations: int
    converged: bool
    trace: list


def rcg_maximize(obj, v0, max_iters=50, tol=None, armijo=1e-4, shrink=0.5, max_backtracks=40):
    """Polak-Ribiere+ conjugate gradient with Armijo backtracking.

    Directions are carried to the new tangent space by re-projection.  The
    first trial step is the Newton step along the direction (exact for the
    second-order model on the manifold), capped at about a radian per entry.
    The method restarts from the gradient whenever the conjugate direction is not
    an ascent direction.  Stops when the Riemannian gradient norm falls below
    ``tol`` (default ``1e-6 * N``) or after ``max_iters`` iterations.
    """
    v = np.asarray(v0, dtype=complex)
    v = v / np.abs(v)
    if tol is None:
        tol = 1e-6 * v.size
    f = obj.value(v)
    grad = tangent_project(v, obj.egrad(v))
    direction = grad.copy()
    trace = [f]
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        gnorm = np.linalg.norm(grad)
        if gnorm < tol:
            converged = True
            it -= 1
            break
        slope = np.real(np.vdot(grad, direction))
        if slope <= 0:
            direction = grad.copy()
            slope = gnorm ** 2
        step = 1.0
        # Newton step along the direction when the objective is concave there;
        # the Riemannian Hessian on circles is Proj(2 Q d) - Re{egrad v*} d
        egrad = obj.egrad(v)
        hess_d = tangent_project(v, obj.egrad(direction) - obj.egrad(np.zeros_like(v)))
        curv = np.real(np.vdot(direction, hess_d - np.real(egrad * v.conj()) * direction))
        if curv < 0:
            step = slope / -curv
        # never move an entry by much more than a radian on the first trial
        step = min(step, 1.0 / max(np.abs(direction).max(), 1e-300))
        accepted = False
        for _ in range(max_backtracks):
            try:
                cand, moved = retract_with_step(v, step * direction)
            except StepRejected:
                step *= shrink
                continue
            egrad_c = obj.egrad(cand)
            # exact increase of a quadratic (trapezoid rule), free of the
            # cancellation in value(cand) - value(v) near the optimum
            gain = np.real(np.vdot(moved, 0.5 * (egrad_c + egrad)))
            if gain >= armijo * step * slope:
                accepted = True
                break
            step *= shrink
        if not accepted:
            break
        fc = obj.value(cand)
        new_grad = tangent_project(cand, egrad_c)
        old_grad = tangent_project(cand, grad)
        old_dir = tangent_project(cand, direction)
        beta = np.real(np.vdot(new_grad, new_grad - old_grad)) / max(gnorm ** 2, 1e-300)
        beta = max(beta, 0.0)
        direction = new_grad + beta * old_dir
        v, f, grad = cand, fc, new_grad
        trace.append(f)
    else:
        converged = np.linalg.norm(grad) < tol
    return RCGResult(v, f, it, bool(converged), trace)
