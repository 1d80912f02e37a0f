"""Positive weight fields ``a(x)`` with analytic first and second derivatives."""
from __future__ import annotations

import numpy as np


class WeightField:
    """Base class.  Subclasses implement ``value``, ``grad`` and ``hess``.

    All methods accept points of shape ``(..., 2)``.
    """

    kind = "abstract"

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError

    def grad_log(self, x):
        return self.grad(x) / self.value(x)[..., None]

    def spec(self) -> dict:
        raise NotImplementedError

    def __mul__(self, other):
        return ProductWeight([self, other])


class ConstantWeight(WeightField):
    kind = "constant"

    def __init__(self, c=1.0):
        if c <= 0:
            raise ValueError("constant weight must be positive")
        self.c = float(c)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], self.c)

    def grad(self, x):
        return np.zeros(np.shape(x))

    def hess(self, x):
        return np.zeros(np.shape(x)[:-1] + (2, 2))

    def spec(self):
        return {"kind": "constant", "value": self.c}


class MonomialWeight(WeightField):
    """``a(x) = x1^k1 x2^k2``; only defined where ``x_i > 0`` for ``k_i != 0``."""

    kind = "monomial"

    def __init__(self, k1=1, k2=0):
        self.k = (float(k1), float(k2))

    @staticmethod
    def _pow(x, k):
        # x^k with x^0 = 1 everywhere and k x^{k-1} = 0 for k = 0
        return np.ones_like(x) if k == 0 else x**k

    def _dpow(self, x, k, order):
        if order == 1:
            return np.zeros_like(x) if k == 0 else k * x ** (k - 1)
        return np.zeros_like(x) if k in (0, 1) else k * (k - 1) * x ** (k - 2)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self._pow(x[..., 0], self.k[0]) * self._pow(x[..., 1], self.k[1])

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        (k1, k2), x1, x2 = self.k, x[..., 0], x[..., 1]
        g1 = self._dpow(x1, k1, 1) * self._pow(x2, k2)
        g2 = self._pow(x1, k1) * self._dpow(x2, k2, 1)
        return np.stack([g1, g2], axis=-1)

    def grad_log(self, x):
        x = np.asarray(x, dtype=float)
        k1, k2 = self.k
        g1 = k1 / x[..., 0] if k1 else np.zeros(x.shape[:-1])
        g2 = k2 / x[..., 1] if k2 else np.zeros(x.shape[:-1])
        return np.stack([g1, g2], axis=-1)

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        (k1, k2), x1, x2 = self.k, x[..., 0], x[..., 1]
        h = np.empty(x.shape[:-1] + (2, 2))
        h[..., 0, 0] = self._dpow(x1, k1, 2) * self._pow(x2, k2)
        h[..., 1, 1] = self._pow(x1, k1) * self._dpow(x2, k2, 2)
        h[..., 0, 1] = h[..., 1, 0] = self._dpow(x1, k1, 1) * self._dpow(x2, k2, 1)
        return h

    def positive_on(self, lo):
        """True if the box with lower corner ``lo`` keeps the weight positive."""
        return all(k == 0 or c > 0 for k, c in zip(self.k, lo))

    def spec(self):
        return {"kind": "monomial", "k1": self.k[0], "k2": self.k[1]}


class BumpWeight(WeightField):
    """``a(x) = base + amplitude * exp(-|x - center|^2 / width^2)``.

    Centered on a boundary point this has a strict local maximum there with
    vanishing normal derivative.
    """

    kind = "boundary_bump"

    def __init__(self, center, amplitude=1.0, width=0.5, base=1.0):
        if base <= 0 or amplitude < -base:
            raise ValueError("bump weight must stay positive")
        self.center = np.asarray(center, dtype=float)
        self.amplitude = float(amplitude)
        self.width = float(width)
        self.base = float(base)

    def _g(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return d, self.amplitude * np.exp(-np.sum(d * d, axis=-1) / self.width**2)

    def value(self, x):
        _, g = self._g(x)
        return self.base + g

    def grad(self, x):
        d, g = self._g(x)
        return (-2.0 / self.width**2) * g[..., None] * d

    def hess(self, x):
        d, g = self._g(x)
        w2 = self.width**2
        eye = np.eye(2)
        outer = d[..., :, None] * d[..., None, :]
        return g[..., None, None] * (4.0 / w2**2 * outer - 2.0 / w2 * eye)

    def spec(self):
        return {"kind": "boundary_bump", "center": self.center.tolist(),
                "amplitude": self.amplitude, "width": self.width, "base": self.base}


class ProductWeight(WeightField):
    kind = "product"

    def __init__(self, factors):
        self.factors = list(factors)

    def value(self, x):
        out = 1.0
        for f in self.factors:
            out = out * f.value(x)
        return out

    def grad_log(self, x):
        return sum(f.grad_log(x) for f in self.factors)

    def grad(self, x):
        return self.value(x)[..., None] * self.grad_log(x)

    def hess(self, x):
        a = self.value(x)
        gl = self.grad_log(x)
        # Hess a / a = sum_j Hess a_j / a_j + (gl gl^T - sum_j gl_j gl_j^T)
        h = np.zeros(np.shape(x)[:-1] + (2, 2))
        for f in self.factors:
            gj = f.grad_log(x)
            h += f.hess(x) / f.value(x)[..., None, None] - gj[..., :, None] * gj[..., None, :]
        h += gl[..., :, None] * gl[..., None, :]
        return a[..., None, None] * h

    def spec(self):
        return {"kind": "product", "factors": [f.spec() for f in self.factors]}


def weight_from_spec(spec: dict) -> WeightField:
    kind = spec.get("kind", "constant")
    if kind == "constant":
        return ConstantWeight(spec.get("value", 1.0))
    if kind == "monomial":
        return MonomialWeight(spec.get("k1", 1), spec.get("k2", 0))
    if kind == "boundary_bump":
        return BumpWeight(spec["center"], spec.get("amplitude", 1.0),
                          spec.get("width", 0.5), spec.get("base", 1.0))
    if kind == "product":
        return ProductWeight([weight_from_spec(f) for f in spec["factors"]])
    raise ValueError(f"unknown weight kind {kind!r}")
