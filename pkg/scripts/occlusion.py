"""Forward-backward occlusion masks against the rendered visibility.

Reports IoU of the predicted and true occluded regions, restricted to pixels
whose true forward flow stays inside the image, at a few resolutions and
flow-noise levels.
"""
import sys

import numpy as np
from _common import parser, save

from flowdepth import oracle
from flowdepth.geometry import pixel_grid
from flowdepth.sampling import occlusion_mask


def iou(spec, noise, seed):
    a, b = oracle.render(spec)
    H, W = a.depth.shape
    g = pixel_grid(H, W) + a.flow_fwd
    inb = (g[..., 0] >= 0) & (g[..., 0] <= W - 1) & (g[..., 1] >= 0) & (g[..., 1] <= H - 1)
    f = oracle.perturb({"f": a.flow_fwd, "b": b.flow_bwd}, {"f": noise, "b": noise}, seed)
    pred = ~occlusion_mask(f["f"], f["b"]) & inb
    true = ~a.visible & inb
    return (pred & true).sum() / (pred | true).sum()


def main(argv=None):
    args = parser(__doc__).parse_args(argv)
    rows = []
    for H, W in ((64, 96), (128, 192), (256, 384)):
        for noise in (0.0, 0.25):
            v = iou(oracle.occluder_scene(H, W), noise, args.seed)
            rows.append({"arm": f"{H}x{W}_n{noise}", "height": H, "width": W, "noise": noise, "iou": v})
            print(f"{H:4d}x{W:<4d} noise {noise:.2f}: IoU {v:.3f}")
    save(args.out, "occlusion", rows)
    return 0 if np.all([r["iou"] >= 0.9 for r in rows if r["height"] == 128 and r["noise"] == 0]) else 1


if __name__ == "__main__":
    sys.exit(main())
