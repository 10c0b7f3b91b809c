"""Minimal float64 neural-network numerics.

Dense and LSTM layers with hand-written backward passes, inverted dropout,
MSE loss, Adam, Polyak averaging, a finite-difference gradient checker, and a
flat binary checkpoint format. Everything runs on numpy in 64-bit so analytic
gradients can be verified against central differences tightly.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def sigmoid(x):
    # exp overflow saturates to inf, which divides out to exactly 0/1 in
    # float64, so the naive form is safe; just silence the warning.
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _uniform_init(rng, shape, fan_in):
    lim = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-lim, lim, size=shape)


class Dense:
    """Fully connected layer y = act(x @ W.T + b)."""

    def __init__(self, in_dim, out_dim, activation="linear",
                 rng: np.random.Generator | None = None):
        if activation not in ("relu", "tanh", "linear"):
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.W = _uniform_init(rng, (out_dim, in_dim), in_dim)
        self.b = np.zeros(out_dim)
        self.dW = np.zeros_like(self.W)
        self.db = np.zeros_like(self.b)

    def forward(self, x, want_cache=False):
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"dense input width {x.shape[-1]} != {self.in_dim}")
        pre = x @ self.W.T + self.b
        if self.activation == "relu":
            out = np.maximum(pre, 0.0)
        elif self.activation == "tanh":
            out = np.tanh(pre)
        else:
            out = pre
        if want_cache:
            return out, (x, pre, out)
        return out

    def backward(self, dout, cache):
        """Accumulate dW/db and return dx. `cache` comes from forward."""
        x, pre, out = cache
        if self.activation == "relu":
            dpre = dout * (pre > 0.0)
        elif self.activation == "tanh":
            dpre = dout * (1.0 - out * out)
        else:
            dpre = dout
        flat_x = x.reshape(-1, self.in_dim)
        flat_d = dpre.reshape(-1, self.out_dim)
        self.dW += flat_d.T @ flat_x
        self.db += flat_d.sum(axis=0)
        return dpre @ self.W

    def params(self):
        return {"W": self.W, "b": self.b}

    def grads(self):
        return {"W": self.dW, "b": self.db}

    def zero_grads(self):
        self.dW[...] = 0.0
        self.db[...] = 0.0


class Lstm:
    """Single LSTM layer with fused gate kernels.

    Gate order along the last axis of Wx/Wh/b is (input, forget, output,
    candidate): the three sigmoid gates sit in one contiguous block so a
    single sigmoid call covers them. The forget-gate bias starts at +1.
    """

    def __init__(self, in_dim, hidden, rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        self.in_dim = in_dim
        self.hidden = hidden
        fan_in = in_dim + hidden
        self.Wx = _uniform_init(rng, (in_dim, 4 * hidden), fan_in)
        self.Wh = _uniform_init(rng, (hidden, 4 * hidden), fan_in)
        self.b = np.zeros(4 * hidden)
        self.b[hidden:2 * hidden] = 1.0
        self.dWx = np.zeros_like(self.Wx)
        self.dWh = np.zeros_like(self.Wh)
        self.db = np.zeros_like(self.b)

    def _gates(self, pre, c_prev):
        """pre [B, 4H] -> (h, c, sig block [B, 3H], g, tanh(c))."""
        H = self.hidden
        sig = sigmoid(pre[:, :3 * H])
        g = np.tanh(pre[:, 3 * H:])
        c = sig[:, H:2 * H] * c_prev + sig[:, :H] * g
        tc = np.tanh(c)
        h = sig[:, 2 * H:] * tc
        return h, c, sig, g, tc

    def step(self, x_t, h_prev, c_prev):
        """One cell step; returns (h, c, cache) for a single time slice."""
        if x_t.shape[-1] != self.in_dim:
            raise ValueError(f"lstm input width {x_t.shape[-1]} != {self.in_dim}")
        pre = x_t @ self.Wx + h_prev @ self.Wh + self.b
        h, c, sig, g, tc = self._gates(pre, c_prev)
        return h, c, (x_t, h_prev, c_prev, sig, g, tc)

    def _dpre(self, dh, dc, c_prev, sig, g, tc, dpre_out):
        """Backprop the gate nonlinearities for one step into dpre_out;
        returns dc_prev."""
        H = self.hidden
        i = sig[:, :H]
        f = sig[:, H:2 * H]
        o = sig[:, 2 * H:]
        dcell = dc + dh * o * (1.0 - tc * tc)
        dpre_out[:, :H] = dcell * g
        dpre_out[:, H:2 * H] = dcell * c_prev
        dpre_out[:, 2 * H:3 * H] = dh * tc
        dpre_out[:, :3 * H] *= sig * (1.0 - sig)
        dpre_out[:, 3 * H:] = (dcell * i) * (1.0 - g * g)
        return dcell * f

    def step_backward(self, dh, dc, cache):
        """Backprop one cell step given upstream dh/dc; returns
        (dx, dh_prev, dc_prev) and accumulates weight grads."""
        x_t, h_prev, c_prev, sig, g, tc = cache
        dpre = np.empty((dh.shape[0], 4 * self.hidden))
        dc_prev = self._dpre(dh, dc, c_prev, sig, g, tc, dpre)
        self.dWx += x_t.T @ dpre
        self.dWh += h_prev.T @ dpre
        self.db += dpre.sum(axis=0)
        return dpre @ self.Wx.T, dpre @ self.Wh.T, dc_prev

    def forward_seq(self, X):
        """Run the layer over a time-major sequence X [T, N, in_dim] from zero
        initial state. Returns H [T, N, hidden] and a cache for backward_seq.

        The loop computes straight into preallocated cache arrays; previous
        hidden/cell values are read back from the outputs of step t-1 rather
        than stored twice. This path is memory-bound, so the in-place style
        is a deliberate trade against readability.
        """
        T, N, D = X.shape
        H = self.hidden
        # Input contribution for all steps in one GEMM.
        pre_x = (X.reshape(T * N, D) @ self.Wx).reshape(T, N, 4 * H)
        Hs = np.empty((T, N, H))
        Cs = np.empty((T, N, H))
        sigs = np.empty((T, N, 3 * H))
        gs = np.empty((T, N, H))
        tcs = np.empty((T, N, H))
        zero = np.zeros((N, H))
        pre = np.empty((N, 4 * H))
        tmp = np.empty((N, H))
        h = c = zero
        for t in range(T):
            np.dot(h, self.Wh, out=pre)
            pre += pre_x[t]
            pre += self.b
            sig = sigs[t]
            np.negative(pre[:, :3 * H], out=sig)
            np.exp(sig, out=sig)
            sig += 1.0
            np.reciprocal(sig, out=sig)
            g = np.tanh(pre[:, 3 * H:], out=gs[t])
            c_new = Cs[t]
            np.multiply(sig[:, H:2 * H], c, out=c_new)      # forget * c_prev
            np.multiply(sig[:, :H], g, out=tmp)             # input * candidate
            c_new += tmp
            tc = np.tanh(c_new, out=tcs[t])
            np.multiply(sig[:, 2 * H:], tc, out=Hs[t])      # output gate
            h = Hs[t]
            c = c_new
        return Hs, (X, Hs, Cs, sigs, gs, tcs)

    def backward_seq(self, dH, cache):
        """BPTT over the cached forward pass; accumulates grads, returns dX."""
        X, Hs, Cs, sigs, gs, tcs = cache
        T, N, D = X.shape
        H = self.hidden
        dpre_all = np.empty((T, N, 4 * H))
        dh = np.empty((N, H))
        dc = np.zeros((N, H))
        tmp = np.empty((N, H))
        tmp3 = np.empty((N, 3 * H))
        zero = np.zeros((N, H))
        dh_rec = None
        for t in range(T - 1, -1, -1):
            if dh_rec is None:
                dh[...] = dH[t]
            else:
                np.add(dH[t], dh_rec, out=dh)
            sig = sigs[t]
            tc = tcs[t]
            g = gs[t]
            c_prev = Cs[t - 1] if t > 0 else zero
            dpre = dpre_all[t]
            # dcell = dc + dh * o * (1 - tc^2), accumulated into dc
            np.multiply(tc, tc, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            tmp *= sig[:, 2 * H:]
            tmp *= dh
            dc += tmp
            np.multiply(dc, g, out=dpre[:, :H])              # d input gate
            np.multiply(dc, c_prev, out=dpre[:, H:2 * H])    # d forget gate
            np.multiply(dh, tc, out=dpre[:, 2 * H:3 * H])    # d output gate
            np.subtract(1.0, sig, out=tmp3)
            tmp3 *= sig
            dpre[:, :3 * H] *= tmp3                          # sigmoid'
            np.multiply(dc, sig[:, :H], out=dpre[:, 3 * H:])
            np.multiply(g, g, out=tmp)
            np.subtract(1.0, tmp, out=tmp)
            dpre[:, 3 * H:] *= tmp                           # tanh' on candidate
            dc *= sig[:, H:2 * H]                            # dc_prev
            if dh_rec is None:
                dh_rec = np.empty((N, H))
            np.dot(dpre, self.Wh.T, out=dh_rec)
        flat_dpre = dpre_all.reshape(T * N, 4 * H)
        self.dWx += X.reshape(T * N, D).T @ flat_dpre
        # h_prev for step t is Hs[t-1]; step 0 starts from zeros.
        if T > 1:
            self.dWh += Hs[:T - 1].reshape((T - 1) * N, H).T @ \
                dpre_all[1:].reshape((T - 1) * N, 4 * H)
        self.db += flat_dpre.sum(axis=0)
        return (flat_dpre @ self.Wx.T).reshape(T, N, D)

    def params(self):
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def grads(self):
        return {"Wx": self.dWx, "Wh": self.dWh, "b": self.db}

    def zero_grads(self):
        self.dWx[...] = 0.0
        self.dWh[...] = 0.0
        self.db[...] = 0.0


def dropout_apply(x, rate, training, rng: np.random.Generator | None = None):
    """Inverted dropout: kept units scaled by 1/(1-rate); identity at inference.

    Returns (output, mask); the mask already includes the 1/(1-rate) scale so
    backward is just dout * mask.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x, np.ones_like(x)
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def mse_loss(pred, target):
    """Mean squared error over all elements; returns (loss, dpred)."""
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


class SequenceRegressor:
    """Stacked two-layer LSTM with dropout and a linear head, applied per step.

    Maps [N, T, in_dim] to [N, T, out_dim]; hidden/cell states start at zero
    for every sequence.
    """

    def __init__(self, in_dim=3, hidden=64, out_dim=2, dropout=0.2,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        self.lstm1 = Lstm(in_dim, hidden, rng)
        self.lstm2 = Lstm(hidden, hidden, rng)
        self.head = Dense(hidden, out_dim, activation="linear", rng=rng)
        self.dropout = dropout
        self.in_dim = in_dim
        self.hidden = hidden
        self.out_dim = out_dim

    def forward(self, X, training=False, rng=None, want_cache=False):
        # Layers run time-major internally; transpose at the boundaries.
        Xt = np.ascontiguousarray(np.swapaxes(np.asarray(X, dtype=float), 0, 1))
        H1, c1 = self.lstm1.forward_seq(Xt)
        H2, c2 = self.lstm2.forward_seq(H1)
        D2, mask = dropout_apply(H2, self.dropout, training, rng)
        Yt, c3 = self.head.forward(D2, want_cache=True)
        Y = np.swapaxes(Yt, 0, 1)
        if want_cache:
            return Y, (c1, c2, mask, c3)
        return Y

    def backward(self, dY, cache):
        c1, c2, mask, c3 = cache
        dYt = np.ascontiguousarray(np.swapaxes(dY, 0, 1))
        dD2 = self.head.backward(dYt, c3)
        dH2 = dD2 * mask
        dH1 = self.lstm2.backward_seq(dH2, c2)
        self.lstm1.backward_seq(dH1, c1)

    def params(self):
        out = {}
        for name, layer in (("lstm1", self.lstm1), ("lstm2", self.lstm2),
                            ("head", self.head)):
            for k, v in layer.params().items():
                out[f"{name}.{k}"] = v
        return out

    def grads(self):
        out = {}
        for name, layer in (("lstm1", self.lstm1), ("lstm2", self.lstm2),
                            ("head", self.head)):
            for k, v in layer.grads().items():
                out[f"{name}.{k}"] = v
        return out

    def zero_grads(self):
        self.lstm1.zero_grads()
        self.lstm2.zero_grads()
        self.head.zero_grads()


class Mlp:
    """Plain dense stack, used for the value and policy networks."""

    def __init__(self, dims, activations, rng: np.random.Generator | None = None):
        if len(dims) != len(activations) + 1:
            raise ValueError("need one activation per layer")
        rng = rng or np.random.default_rng()
        self.layers = [Dense(dims[i], dims[i + 1], activations[i], rng)
                       for i in range(len(activations))]

    def forward(self, x, want_cache=False):
        caches = []
        for layer in self.layers:
            if want_cache:
                x, c = layer.forward(x, want_cache=True)
                caches.append(c)
            else:
                x = layer.forward(x)
        if want_cache:
            return x, caches
        return x

    def backward(self, dout, caches):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dout = layer.backward(dout, cache)
        return dout

    def params(self):
        return {f"l{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.params().items()}

    def grads(self):
        return {f"l{i}.{k}": v for i, layer in enumerate(self.layers)
                for k, v in layer.grads().items()}

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()


class Adam:
    """Adam with bias correction, updating parameter arrays in place."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict):
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {k!r}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def polyak_update(target_params: dict, online_params: dict, tau=0.005):
    """Soft update: target <- (1 - tau) * target + tau * online, in place."""
    for k, tp in target_params.items():
        tp *= 1.0 - tau
        tp += tau * online_params[k]


def copy_params(src: dict) -> dict:
    return {k: v.copy() for k, v in src.items()}


def assign_params(dst: dict, src: dict):
    for k, v in dst.items():
        v[...] = src[k]


def grad_check(loss_fn, params: dict, analytic: dict, h=1e-5,
               max_entries_per_block=None, rng=None, floor=1e-6):
    """Compare analytic gradients against central finite differences.

    `loss_fn` re-evaluates the scalar loss at the current parameter values.
    When a block has more entries than `max_entries_per_block`, a seeded
    random subset is checked. Returns the max relative error and a per-block
    breakdown.

    The relative-error denominator is floored at `floor`: below that
    magnitude the comparison is effectively absolute, since central
    differences at step h carry roundoff noise around eps*|loss|/h and
    cannot certify smaller gradient entries any tighter.
    """
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    per_block = {}
    for name, p in params.items():
        flat = p.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries_per_block is not None and flat.size > max_entries_per_block:
            idxs = rng.choice(flat.size, size=max_entries_per_block, replace=False)
        block_worst = 0.0
        ana_flat = analytic[name].reshape(-1)
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + h
            lp = loss_fn()
            flat[idx] = orig - h
            lm = loss_fn()
            flat[idx] = orig
            num = (lp - lm) / (2.0 * h)
            ana = ana_flat[idx]
            denom = max(abs(num) + abs(ana), floor)
            block_worst = max(block_worst, abs(num - ana) / denom)
        per_block[name] = block_worst
        worst = max(worst, block_worst)
    return worst, per_block


# --- checkpoint format -------------------------------------------------------
#
# A checkpoint is <base>.json (manifest: format version, tensor names/shapes in
# file order, free-form meta) plus <base>.bin holding every tensor flattened
# row-major as little-endian float64, concatenated in manifest order.

CHECKPOINT_VERSION = 1


def save_checkpoint(base_path, params: dict, meta: dict | None = None):
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.items()],
        "meta": meta or {},
    }
    with open(base.with_suffix(".json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(base.with_suffix(".bin"), "wb") as fh:
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(base_path):
    """Load (params, meta) saved by save_checkpoint; bit-exact round trip."""
    base = Path(base_path)
    with open(base.with_suffix(".json")) as fh:
        manifest = json.load(fh)
    if manifest["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {manifest['format_version']}")
    raw = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f8")
    params = {}
    offset = 0
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        params[entry["name"]] = raw[offset:offset + size].reshape(shape).astype(
            np.float64, copy=True)
        offset += size
    if offset != raw.size:
        raise ValueError("checkpoint payload size mismatch")
    return params, manifest["meta"]
