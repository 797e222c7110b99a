"""Shared fixtures for the test modules."""

import numpy as np

from hazelab import aodnet
from hazelab.detection import BBox, Detection, GtBox

CLASSES = ("car", "person", "bus")


def probe_net(seed: int) -> aodnet.AodNet:
    """Network with O(1) activations, so finite differences rarely straddle a ReLU kink.

    The default 0.01 init leaves deep pre-activations about as small as the
    difference step, which makes parameter-level checks measure kinks instead
    of the gradient.
    """
    net = aodnet.init(seed, std=0.3)
    rng = np.random.default_rng(seed + 1000)
    for k in net.param_names():
        if k.endswith("bias"):
            net.params[k] = rng.normal(0.05, 0.1, net.params[k].shape)
    return net


def random_pair(seed: int, size: int = 8):
    rng = np.random.default_rng(seed)
    return rng.random((size, size, 3)), rng.random((size, size, 3))


def oracle_iou(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    w = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    h = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = w * h
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def oracle_ap(dets, gts, cls, thr=0.5):
    """Brute-force PR computation for one class from plain tuples."""
    d = sorted(((s, img, box) for img, c, box, s in dets if c == cls), key=lambda r: (-r[0], r[1], r[2]))
    g = [(img, box) for img, c, box in gts if c == cls]
    taken = set()
    flags = []
    for _, img, box in d:
        cands = sorted((j for j, (gi, gb) in enumerate(g) if gi == img and j not in taken),
                       key=lambda j: g[j][1])
        best, best_o = None, thr
        for j in cands:
            o = oracle_iou(box, g[j][1])
            if o > best_o or (best is None and o >= best_o):
                best, best_o = j, o
        if best is not None:
            taken.add(best)
        flags.append(best is not None)
    if not g:
        return None
    tp = fp = 0
    pts = []
    for f in flags:
        tp += f
        fp += not f
        pts.append((tp / len(g), tp / (tp + fp)))
    ap, prev_r = 0.0, 0.0
    for r, _ in pts:
        p_interp = max(p for rr, p in pts if rr >= r)
        ap += (r - prev_r) * p_interp
        prev_r = r
    return ap


def as_objects(dets, gts):
    return ([Detection(i, c, BBox(*b), s) for i, c, b, s in dets],
            [GtBox(i, c, BBox(*b)) for i, c, b in gts])


def random_instance(rng):
    def box():
        x0, y0 = rng.integers(0, 4, 2)
        w, h = rng.integers(1, 4, 2)
        return (float(x0), float(y0), float(x0 + w), float(y0 + h))

    images = ["a", "b"]
    n_cls = int(rng.integers(1, 4))
    gts = [(images[rng.integers(2)], CLASSES[rng.integers(n_cls)], box()) for _ in range(rng.integers(0, 4))]
    dets = [(images[rng.integers(2)], CLASSES[rng.integers(n_cls)], box(), float(rng.choice([0.3, 0.6, 0.9])))
            for _ in range(rng.integers(0, 5))]
    return dets, gts
