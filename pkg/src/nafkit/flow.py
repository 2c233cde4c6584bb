"""Autoregressive flow layers, stacking, densities, and sampling.

A layer pairs one masked conditioner with one transformer family; its
Jacobian is triangular in the layer's variable order, so the layer
log-determinant is the sum of per-dimension scalar log-derivatives.
Stacks alternate natural and reversed orders. One forward implementation
serves both directions: data -> noise for density estimation and
noise -> sample for energy fitting; only the interpretation differs.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from . import diffgraph as dg
from . import stablemath as sm
from . import transformer as tf
from .conditioner import (
    GATE_IDENTITY_OFFSET,
    MadeConditioner,
    SOFTNESS_IDENTITY_OFFSET,
)
from .errors import DataError, DomainError, SaturationError

LOG_2PI = float(np.log(2.0 * np.pi))

KINDS = ("affine-exp", "affine-gate", "dsf", "ddsf")


class StandardNormal:
    """Isotropic unit Gaussian base distribution."""

    name = "normal"

    def __init__(self, m: int):
        self.m = int(m)

    def log_prob(self, x):
        return dg.vsum(dg.mul(x, x), axis=1) * (-0.5) - 0.5 * self.m * LOG_2PI

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.m))


class UniformBase:
    """Uniform base over the open unit cube; used by universality demos."""

    name = "uniform"

    def __init__(self, m: int):
        self.m = int(m)

    def log_prob(self, x):
        if dg.is_value(x):
            return dg.Value(np.zeros(x.shape[0]), op="const")
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros(x.shape[0])
        out[np.any((x <= 0.0) | (x >= 1.0), axis=1)] = -np.inf
        return out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.random((n, self.m))


_BASES = {"normal": StandardNormal, "uniform": UniformBase}


def _head_layout(kind: str, d: int, dims):
    """Per-dimension conditioner output width, offsets, and block slices."""
    if kind in ("affine-exp", "affine-gate"):
        offset = np.zeros(2)
        if kind == "affine-gate":
            offset[1] = GATE_IDENTITY_OFFSET
        return 2, offset, None
    if kind == "dsf":
        offset = np.concatenate(
            [np.zeros(d), np.full(d, SOFTNESS_IDENTITY_OFFSET), np.zeros(d)]
        )
        return 3 * d, offset, None
    if kind == "ddsf":
        slices, offs, pos = [], [], 0
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            eta = slice(pos, pos + d_in)
            pos += d_in
            a_pre = slice(pos, pos + d_out)
            pos += d_out
            b = slice(pos, pos + d_out)
            pos += d_out
            slices.append((eta, a_pre, b))
            offs.extend([np.zeros(d_in), np.full(d_out, SOFTNESS_IDENTITY_OFFSET),
                         np.zeros(d_out)])
        return pos, np.concatenate(offs), slices
    raise DomainError(f"unknown transformer kind {kind!r}")


class FlowLayer:
    """One autoregressive transformation y_t = tau(c(x_<t), x_t)."""

    def __init__(self, m, kind, d=tf.DSF_DEFAULT_D, ddsf_dims=None,
                 hidden=(64,), order=None, seed=0, name="layer"):
        if kind not in KINDS:
            raise DomainError(f"unknown transformer kind {kind!r}; use one of {KINDS}")
        self.m = int(m)
        self.kind = kind
        self.d = int(d)
        self.dims = None
        self.name = name
        if kind == "ddsf":
            dims = tuple(int(v) for v in (ddsf_dims or tf.DDSF_DEFAULT_DIMS))
            if dims[0] != 1 or dims[-1] != 1 or len(dims) < 2:
                raise DomainError("ddsf dims must chain from 1 to 1")
            self.dims = dims
        width, offset, self._ddsf_slices = _head_layout(kind, self.d, self.dims)
        self.order = tuple(order) if order is not None else tuple(range(1, m + 1))
        self.conditioner = MadeConditioner(
            m, width, hidden_sizes=hidden, order=self.order, out_offset=offset,
            seed=seed, name=f"{name}.cond",
        )
        self.v_u, self.v_w = [], []
        if kind == "ddsf":
            for li, (d_in, d_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
                self.v_u.append(dg.Parameter(np.zeros((d_out, d_in)), f"{name}.vu{li}"))
                self.v_w.append(dg.Parameter(np.zeros((d_out, d_out)), f"{name}.vw{li}"))

    def parameters(self):
        return [*self.conditioner.parameters(), *self.v_u, *self.v_w]

    # -- forward ---------------------------------------------------------

    def forward(self, x, on_saturate="raise"):
        """x: (n, m) -> (y (n, m), logdet (n,)); graph iff x is a Value."""
        blocks = self.conditioner.forward(x)  # (n, m, P)
        if self.kind in ("affine-exp", "affine-gate"):
            mu = dg.take(blocks, (slice(None), slice(None), 0))
            s = dg.take(blocks, (slice(None), slice(None), 1))
            y, ld = tf._affine_core(x, mu, s, self.kind.split("-")[1])
            return y, dg.vsum(ld, axis=1)

        n = x.shape[0]
        B = n * self.m
        x_flat = dg.reshape(x, (B,))
        if self.kind == "dsf":
            d = self.d
            w_pre = dg.reshape(dg.take(blocks, (Ellipsis, slice(0, d))), (B, d))
            a_pre = dg.reshape(dg.take(blocks, (Ellipsis, slice(d, 2 * d))), (B, d))
            b = dg.reshape(dg.take(blocks, (Ellipsis, slice(2 * d, 3 * d))), (B, d))
            try:
                y_f, ld_f = tf.dsf_from_preact(x_flat, w_pre, a_pre, b, on_saturate)
            except SaturationError as err:
                raise self._with_dim(err) from None
        else:
            layers = self._ddsf_layers(blocks, B, graph=dg.is_value(x))
            try:
                y_f, ld_f = tf._ddsf_core(x_flat, layers, on_saturate)
            except SaturationError as err:
                raise self._with_dim(err) from None
        y = dg.reshape(y_f, (n, self.m))
        logdet = dg.vsum(dg.reshape(ld_f, (n, self.m)), axis=1)
        return y, logdet

    def _ddsf_layers(self, blocks, B, graph):
        out = []
        for li, (sl_eta, sl_a, sl_b) in enumerate(self._ddsf_slices):
            d_in, d_out = self.dims[li], self.dims[li + 1]
            eta = dg.reshape(dg.take(blocks, (Ellipsis, sl_eta)), (B, 1, d_in))
            a_pre = dg.reshape(dg.take(blocks, (Ellipsis, sl_a)), (B, d_out))
            b = dg.reshape(dg.take(blocks, (Ellipsis, sl_b)), (B, d_out))
            vu = self.v_u[li] if graph else self.v_u[li].data
            vw = self.v_w[li] if graph else self.v_w[li].data
            log_u = dg.logsoftmax(dg.add(vu, eta), axis=-1)  # (B, d_out, d_in)
            log_w = dg.logsoftmax(vw, axis=-1)  # (d_out, d_out)
            a = dg.softplus(a_pre)
            out.append({
                "u": dg.exp(log_u),
                "log_u": log_u,
                "log_w": log_w,
                "a": a,
                "log_a": dg.log(a),
                "b": b,
            })
        return out

    def _with_dim(self, err: SaturationError) -> SaturationError:
        # the flat layout is (sample, dimension) row-major
        dim = None if err.index is None else err.index % self.m
        return SaturationError(
            f"{self.name}, dimension {dim}: {err}",
            magnitude=err.magnitude, layer=err.layer, dim=dim, index=err.index,
        )

    # -- inverse ---------------------------------------------------------

    def inverse(self, y: np.ndarray) -> np.ndarray:
        """Recover x with f(x) = y, one dimension per conditioner pass.

        Proceeds in the layer's degree order so each transformer's
        pseudo-parameters are functions of already-recovered coordinates.
        """
        y = np.asarray(y, dtype=np.float64)
        x = np.zeros_like(y)
        for deg in range(1, self.m + 1):
            i = self.order.index(deg)
            blocks = self.conditioner.forward(x)
            x[:, i] = self._invert_dim(blocks, i, y[:, i])
        return x

    def _invert_dim(self, blocks, i, y_i):
        if self.kind in ("affine-exp", "affine-gate"):
            mu = blocks[:, i, 0]
            s = blocks[:, i, 1]
            if self.kind == "affine-exp":
                return (y_i - mu) * np.exp(-s)
            sig = sm.sigmoid(s)  # the exact forward gate, not its log form
            return (y_i - (1.0 - sig) * mu) / sig
        if self.kind == "dsf":
            d = self.d
            w_pre = blocks[:, i, 0:d]
            a_pre = blocks[:, i, d: 2 * d]
            b = blocks[:, i, 2 * d: 3 * d]
            fwd = lambda t: tf.dsf_from_preact(t, w_pre, a_pre, b, "clamp")[0]
        else:
            layers = self._ddsf_layers_np(blocks[:, i, :])
            fwd = lambda t: tf._ddsf_core(t, layers, "clamp")[0]
        return tf.invert_batch(y_i, fwd)

    def _ddsf_layers_np(self, block):
        n = block.shape[0]
        fake = block.reshape(n, 1, -1)
        return self._ddsf_layers(fake, n, graph=False)

    # -- (de)serialization -------------------------------------------------

    def spec(self) -> dict:
        return {
            "kind": self.kind,
            "order": list(self.order),
            "d": self.d,
            "L": len(self.dims) - 1 if self.dims else None,
            "dims": list(self.dims) if self.dims else None,
            "hidden": list(self.conditioner.hidden_sizes),
        }


class FlowStack:
    """Ordered flow layers over a base distribution."""

    def __init__(self, layers, base="normal"):
        if not layers:
            raise DomainError("a FlowStack needs at least one layer")
        self.m = layers[0].m
        if any(l.m != self.m for l in layers):
            raise DomainError("all layers must share one dimensionality")
        self.layers = list(layers)
        if isinstance(base, str):
            if base not in _BASES:
                raise DomainError(f"unknown base {base!r}")
            base = _BASES[base](self.m)
        self.base = base

    @classmethod
    def build(cls, m, kind, n_layers=1, d=tf.DSF_DEFAULT_D, ddsf_dims=None,
              hidden=(64,), seed=0, base="normal"):
        """Stack with orders reversed on every odd (0-indexed) layer."""
        natural = tuple(range(1, m + 1))
        layers = []
        for i in range(n_layers):
            order = natural if i % 2 == 0 else tuple(reversed(natural))
            layers.append(FlowLayer(
                m, kind, d=d, ddsf_dims=ddsf_dims, hidden=hidden, order=order,
                seed=seed + 1000 * i, name=f"layer{i}",
            ))
        return cls(layers, base=base)

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        names = [p.name for p in out]
        if len(set(names)) != len(names):
            raise DomainError("duplicate parameter names in stack")
        return out

    def forward(self, x, on_saturate="raise"):
        """Map through every layer; total logdet is the exact sum."""
        total = None
        for layer in self.layers:
            x, ld = layer.forward(x, on_saturate)
            total = ld if total is None else total + ld
        return x, total

    def log_density(self, x):
        """Change-of-variables density of x under base + stack."""
        u, logdet = self.forward(x)
        return self.base.log_prob(u) + logdet

    def transform_noise(self, x):
        """Push base noise forward; returns (y, log q(y))."""
        y, logdet = self.forward(x)
        return y, self.base.log_prob(x) - logdet

    def inverse(self, y: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            y = layer.inverse(y)
        return y

    def sample(self, n: int, seed=0) -> np.ndarray:
        rng = np.random.default_rng(seed)
        z = self.base.sample(n, rng)
        return self.inverse(z)

    # -- checkpoints -------------------------------------------------------

    def to_json(self) -> dict:
        params = {
            p.name: {"shape": list(p.data.shape), "data": p.data.reshape(-1).tolist()}
            for p in self.parameters()
        }
        return {
            "version": 1,
            "m": self.m,
            "base": self.base.name,
            "layers": [layer.spec() for layer in self.layers],
            "params": params,
        }

    def save(self, path: str):
        payload = json.dumps(self.to_json(), sort_keys=True)
        write_atomic(path, payload)

    @classmethod
    def from_json(cls, doc: dict) -> "FlowStack":
        if doc.get("version") != 1:
            raise DataError(f"unsupported checkpoint version {doc.get('version')!r}")
        layers = []
        for i, spec in enumerate(doc["layers"]):
            layers.append(FlowLayer(
                doc["m"], spec["kind"], d=spec["d"], ddsf_dims=spec["dims"],
                hidden=tuple(spec["hidden"]), order=tuple(spec["order"]),
                seed=0, name=f"layer{i}",
            ))
        stack = cls(layers, base=doc["base"])
        by_name = {p.name: p for p in stack.parameters()}
        saved = doc["params"]
        if set(saved) != set(by_name):
            missing = set(by_name) ^ set(saved)
            raise DataError(f"checkpoint parameter names mismatch: {sorted(missing)[:4]}")
        for name, entry in saved.items():
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != by_name[name].data.shape:
                raise DataError(f"checkpoint shape mismatch for {name}")
            by_name[name].data = arr
        return stack

    @classmethod
    def load(cls, path: str) -> "FlowStack":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise DataError(f"unreadable checkpoint {path}: {err}") from None
        return cls.from_json(doc)


def write_atomic(path: str, text: str):
    """Write via a temp file + rename so partial files never appear."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
