"""Independent brute-force references shared by unit and acceptance tests."""
import numpy as np


def chebyshev_brute(mask: np.ndarray) -> np.ndarray:
    """min over known q of max(|dy|, |dx|); 0 on known pixels and when nothing is known."""
    m = mask.astype(bool)
    out = np.zeros(m.shape, dtype=np.int64)
    known = np.argwhere(~m)
    masked = np.argwhere(m)
    if len(known) == 0 or len(masked) == 0:
        return out
    for start in range(0, len(masked), 512):
        chunk = masked[start:start + 512]
        d = np.abs(chunk[:, None, :] - known[None, :, :]).max(axis=-1).min(axis=1)
        out[chunk[:, 0], chunk[:, 1]] = d
    return out


def dilation_steps(mask: np.ndarray) -> np.ndarray:
    """Count 3×3 all-ones dilations of the known set until each pixel is covered."""
    m = mask.astype(bool)
    covered = ~m
    out = np.zeros(m.shape, dtype=np.int64)
    if not covered.any():
        return out
    step = 0
    while not covered.all():
        step += 1
        p = np.pad(covered, 1)
        grown = np.zeros_like(covered)
        for dy in range(3):
            for dx in range(3):
                grown |= p[dy:dy + m.shape[0], dx:dx + m.shape[1]]
        out[grown & ~covered] = step
        covered = grown
    return out


def ray_march_bits(mask: np.ndarray) -> np.ndarray:
    """Walk each cardinal ray pixel by pixel; set bits for the shortest finite rays."""
    m = mask.astype(bool)
    h, w = m.shape
    bits = np.zeros((h, w, 4), dtype=np.uint8)
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]  # up, down, left, right
    for y in range(h):
        for x in range(w):
            if not m[y, x]:
                continue
            lengths = []
            for dy, dx in steps:
                k, yy, xx = 0, y, x
                found = None
                while True:
                    k += 1
                    yy += dy
                    xx += dx
                    if not (0 <= yy < h and 0 <= xx < w):
                        break
                    if not m[yy, xx]:
                        found = k
                        break
                lengths.append(found)
            finite = [v for v in lengths if v is not None]
            if finite:
                best = min(finite)
                for k, v in enumerate(lengths):
                    bits[y, x, k] = v == best
    return bits


def random_mask(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    kind = rng.integers(0, 5)
    if kind == 0:
        return (rng.random((h, w)) < rng.uniform(0.05, 0.95)).astype(np.uint8)
    if kind == 1:
        m = np.zeros((h, w), np.uint8)
        for _ in range(rng.integers(1, 4)):
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            m[y0:y0 + rng.integers(1, h + 1), x0:x0 + rng.integers(1, w + 1)] = 1
        return m
    if kind == 2:
        m = np.ones((h, w), np.uint8)
        m[rng.integers(0, h), rng.integers(0, w)] = 0
        return m
    if kind == 3:
        return (rng.random((h, w)) < 0.98).astype(np.uint8)
    return rng.integers(0, 2, size=(h, w)).astype(np.uint8) * (rng.random() < 0.9)


def bce_loop(p: np.ndarray, t: np.ndarray, eps: float = 1e-7) -> float:
    total = 0.0
    for pv, tv in zip(p.reshape(-1), t.reshape(-1)):
        pv = min(max(float(pv), eps), 1 - eps)
        total += -(tv * np.log(pv) + (1 - tv) * np.log(1 - pv))
    return total / p.size


def confusion_loop(pred: np.ndarray, gt: np.ndarray, region: np.ndarray):
    tp = fp = fn = 0
    for pv, gv, rv in zip(pred.reshape(-1), gt.reshape(-1), region.reshape(-1)):
        if not rv:
            continue
        if pv and gv:
            tp += 1
        elif pv and not gv:
            fp += 1
        elif gv and not pv:
            fn += 1
    return tp, fp, fn


def log_sigmoid_scalar(z: float) -> float:
    return -np.log1p(np.exp(-z)) if z >= 0 else z - np.log1p(np.exp(z))


def adversarial_loop(real_logits, fake_logits, mask_grid):
    """L_D and L_G by explicit summation over patches; mask_grid already on the patch grid."""
    n = real_logits.size
    d1 = d2 = d3 = g = 0.0
    for zr, zf, m in zip(real_logits.reshape(-1), fake_logits.reshape(-1), mask_grid.reshape(-1)):
        zr, zf = min(max(zr, -20), 20), min(max(zf, -20), 20)
        d1 -= log_sigmoid_scalar(zr)
        d2 -= log_sigmoid_scalar(zf) * (1 - m)
        d3 -= log_sigmoid_scalar(-zf) * m
        g -= log_sigmoid_scalar(zf)
    return (d1 + d2 + d3) / n, g / n


def feature_match_loop(real, fake) -> float:
    per_layer = []
    for r, f in zip(real, fake):
        acc = 0.0
        for a, b in zip(r.reshape(-1), f.reshape(-1)):
            acc += abs(float(a) - float(b))
        per_layer.append(acc / r.size)
    return sum(per_layer) / len(per_layer)


def conv2d_loop(x, w, b, stride=1, padding=0, dilation=1):
    n, cin, h, wd = x.shape
    cout, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    ow = (wd + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((n, cout, oh, ow))
    for i in range(n):
        for o in range(cout):
            for p in range(oh):
                for q in range(ow):
                    acc = 0.0 if b is None else float(b[o])
                    for c in range(cin):
                        for u in range(k):
                            for v in range(k):
                                acc += w[o, c, u, v] * xp[i, c, p * stride + u * dilation, q * stride + v * dilation]
                    out[i, o, p, q] = acc
    return out


def ssim_loop(a: np.ndarray, b: np.ndarray, win: np.ndarray, data_range: float = 1.0) -> float:
    """Per-window Gaussian-weighted SSIM averaged over every fully contained window (2-D)."""
    k = len(win)
    w2 = np.outer(win, win)
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    for i in range(a.shape[0] - k + 1):
        for j in range(a.shape[1] - k + 1):
            pa, pb = a[i:i + k, j:j + k], b[i:i + k, j:j + k]
            ma, mb = (w2 * pa).sum(), (w2 * pb).sum()
            va = (w2 * (pa - ma) ** 2).sum()
            vb = (w2 * (pb - mb) ** 2).sum()
            cov = (w2 * (pa - ma) * (pb - mb)).sum()
            vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def ray_march_shifts(mask: np.ndarray) -> np.ndarray:
    """Same bits as ray_march_bits, marching all pixels one step at a time in numpy."""
    m = mask.astype(bool)
    h, w = m.shape
    known = ~m
    lengths = np.full((4, h, w), np.inf)
    for k in range(1, max(h, w)):
        hit = np.zeros((4, h, w), dtype=bool)
        hit[0, k:, :] = known[:-k, :]  # up: pixel k rows above
        hit[1, :-k, :] = known[k:, :]  # down
        hit[2, :, k:] = known[:, :-k]  # left
        hit[3, :, :-k] = known[:, k:]  # right
        lengths[np.isinf(lengths) & hit] = k
    best = lengths.min(axis=0)
    bits = (lengths == best) & np.isfinite(lengths) & m
    return np.moveaxis(bits, 0, -1).astype(np.uint8)
