"""Built-in oracle-equivalence and gradient-check suites (``patchnet selftest``)."""
from __future__ import annotations

import time

import numpy as np

from .aggregation import init_params
from .correlation import CorrelationConfig, FourierCoefficients
from .kernels import ComplexPlane, conv2d_valid, fft2d, soft_select_pool
from .training import TrainConfig, localization_loss, pair_forward_backward, synth_pair


def _rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    scale = max(float(np.max(np.abs(b))), 1e-12)
    return float(np.max(np.abs(a - b))) / scale


def conv_oracle(x, w, stride):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = (h - kh) // stride + 1, (wd - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for k in range(o):
        for y in range(ho):
            for xx in range(wo):
                acc = 0.0
                for ci in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            acc += x[ci, y * stride + i, xx * stride + j] * w[k, ci, i, j]
                out[k, y, xx] = acc
    return out


def dft_oracle(z):
    h, w = z.shape
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            acc = 0j
            for y in range(h):
                for x in range(w):
                    acc += z[y, x] * np.exp(-2j * np.pi * (u * y / h + v * x / w))
            out[u, v] = acc
    return out


def pool_oracle(s, f, b):
    c, h, w = s.shape
    so = np.zeros((c, h // 2, w // 2))
    fo = np.zeros((4 * c, h // 2, w // 2))
    for m in range(c):
        for y in range(h // 2):
            for x in range(w // 2):
                pos = [(2 * y + i, 2 * x + j) for i in (0, 1) for j in (0, 1)]
                sc = np.array([s[m, py, px] for py, px in pos])
                so[m, y, x] = sc.max()
                e = np.exp(sc - sc.max())
                p = e / e.sum()
                for k in range(4):
                    fo[4 * m + k, y, x] = sum(p[q] * (f[4 * m + k, py, px] + b[q, k])
                                              for q, (py, px) in enumerate(pos))
    return so, fo


def loc_loss_oracle(r, gt, alpha):
    h, w = r.shape[1:]
    total = 0.0
    for y in range(h):
        for x in range(w):
            if (y, x) == tuple(gt):
                continue
            total += max(r[0, y, x] - r[0, gt[0], gt[1]] + alpha * (abs(y - gt[0]) + abs(x - gt[1])), 0.0)
    return total


def check_kernels(n: int = 1000, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    worst = {"conv2d_valid": 0.0, "fft2d": 0.0, "soft_select_pool": 0.0, "localization_loss": 0.0,
             "localization_loss_grad": 0.0}
    for _ in range(n):
        c, o = rng.integers(1, 4), rng.integers(1, 4)
        kh, kw = rng.integers(1, 4), rng.integers(1, 4)
        h, w = rng.integers(kh, 9), rng.integers(kw, 9)
        stride = int(rng.integers(1, 3))
        x = rng.normal(size=(c, h, w))
        wt = rng.normal(size=(o, c, kh, kw))
        worst["conv2d_valid"] = max(worst["conv2d_valid"],
                                    _rel_err(conv2d_valid(x, wt, stride), conv_oracle(x, wt, stride)))
        hh, ww = 2 ** rng.integers(0, 3), 2 ** rng.integers(0, 3)
        z = rng.normal(size=(hh, ww)) + 1j * rng.normal(size=(hh, ww))
        got = fft2d(ComplexPlane.from_array(z)).to_array()
        worst["fft2d"] = max(worst["fft2d"], _rel_err(got, dft_oracle(z)))
        cs = int(rng.integers(1, 3))
        sh, sw = 2 * rng.integers(1, 3), 2 * rng.integers(1, 3)
        s = rng.normal(size=(cs, sh, sw)) * 3
        f = rng.normal(size=(4 * cs, sh, sw))
        b = rng.normal(size=(4, 4))
        so, fo = soft_select_pool(s, f, b)
        eso, efo = pool_oracle(s, f, b)
        worst["soft_select_pool"] = max(worst["soft_select_pool"], _rel_err(so, eso), _rel_err(fo, efo))
        rh, rw = rng.integers(1, 6), rng.integers(1, 6)
        r = rng.normal(size=(1, rh, rw))
        gt = (int(rng.integers(rh)), int(rng.integers(rw)))
        got, grad = localization_loss(r, gt, 0.05)
        ref = loc_loss_oracle(r, gt, 0.05)
        worst["localization_loss"] = max(worst["localization_loss"], abs(got - ref) / max(abs(ref), 1e-12))
        eps = 1e-7
        for idx in np.ndindex(r.shape):
            rp, rm = r.copy(), r.copy()
            rp[idx] += eps
            rm[idx] -= eps
            fd = (loc_loss_oracle(rp, gt, 0.05) - loc_loss_oracle(rm, gt, 0.05)) / (2 * eps)
            err = abs(fd - grad[idx]) / max(1.0, abs(fd))
            worst["localization_loss_grad"] = max(worst["localization_loss_grad"], err)
    return worst


GRADCHECK_CONFIG = CorrelationConfig(N=4, K=4, template_size=16, search_size=30, corr_stride=2)


def check_gradients(seed: int = 0, eps: float = 1e-3, samples: int | None = 8):
    """Worst FD mismatch per parameter group: max over checked entries of
    ``|fd - an| / max(|fd|, |an|)``, counted as 0 when ``|fd - an| <= 1e-6``.

    ``samples`` entries are drawn per group; ``None`` checks every entry.
    """
    rng = np.random.default_rng(seed)
    cfg = GRADCHECK_CONFIG
    params = init_params(cfg, seed=seed, noise=0.3)
    for st in params.stages:
        st.pool_bias = st.pool_bias + rng.normal(0, 1, (4, 4))
        st.offset_conv = (st.offset_conv + rng.normal(0, 0.3, st.offset_conv.shape)) * st.offset_mask
    params.coeffs = FourierCoefficients.from_quadrant(rng.uniform(0.5, 1.5, (cfg.K // 2 + 1,) * 2))
    pair = synth_pair(int(rng.integers(1 << 30)), None, cfg)
    tc = TrainConfig()
    _, grads = pair_forward_backward(pair, params, tc)

    def loss(p):
        return pair_forward_backward(pair, p, tc, need_grads=False)[0]["total"]

    def mismatch(fd, an):
        diff = abs(fd - an)
        if diff <= 1e-6:
            return 0.0
        return diff / max(abs(fd), abs(an))

    worst = {}
    q = params.coeffs.quadrant()
    w = 0.0
    for idx in np.ndindex(q.shape):
        qp, qm = q.copy(), q.copy()
        qp[idx] += eps
        qm[idx] -= eps
        pp, pm = params.copy(), params.copy()
        pp.coeffs = FourierCoefficients.from_quadrant(qp)
        pm.coeffs = FourierCoefficients.from_quadrant(qm)
        w = max(w, mismatch((loss(pp) - loss(pm)) / (2 * eps), grads.coeffs[idx]))
    worst["coeffs"] = w
    for si, st in enumerate(params.stages):
        for name, mask in (("score_conv", st.score_mask), ("offset_conv", st.offset_mask),
                           ("pool_bias", np.ones((4, 4)))):
            live = np.argwhere(mask != 0)
            if samples is not None and len(live) > samples:
                live = live[rng.choice(len(live), samples, replace=False)]
            w = 0.0
            for idx in map(tuple, live):
                pp, pm = params.copy(), params.copy()
                getattr(pp.stages[si], name)[idx] += eps
                getattr(pm.stages[si], name)[idx] -= eps
                fd = (loss(pp) - loss(pm)) / (2 * eps)
                w = max(w, mismatch(fd, getattr(grads.stages[si], name)[idx]))
            worst[f"stage{si + 1}.{name}"] = w
    return worst


KERNEL_TOLERANCE = {"localization_loss_grad": 1e-4}


def run(out=print, kernel_instances: int = 1000, grad_seeds=(0, 1, 2, 3, 4),
        samples: int | None = None) -> bool:
    ok = True
    t = time.time()
    for name, err in check_kernels(kernel_instances).items():
        passed = err <= KERNEL_TOLERANCE.get(name, 1e-6)
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'} {name}: max relative error {err:.2e} "
            f"over {kernel_instances} instances")
    for seed in grad_seeds:
        worst = check_gradients(seed, samples=samples)
        err = max(worst.values())
        passed = err <= 1e-3
        ok &= passed
        out(f"{'PASS' if passed else 'FAIL'} gradients seed {seed}: worst mismatch {err:.2e}")
    out(f"selftest {'passed' if ok else 'FAILED'} in {time.time() - t:.1f}s")
    return ok
