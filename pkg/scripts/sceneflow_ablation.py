"""Scene-flow parameters on / off on the one-moving-panel scene.

Two regimes: label-free (photometric, smoothness and consistency terms,
scored by depth RMSE on the moving panel) and with depth labels (scored by
scene-flow endpoint error on the eroded panel interior).
"""
import sys

from _common import parser, save

from flowdepth import experiments as E


def _pair(make, seed):
    out = {}
    for arm, sf in (("on", True), ("off", False)):
        res = E.run_experiment(make(sf, seed=seed))
        out[arm] = {"arm": arm, "seconds": res.seconds, **res.record}
    return out


def main(argv=None):
    args = parser(__doc__).parse_args(argv)
    free = _pair(E.sceneflow_ablation_config, args.seed)
    ratio = free["off"]["depth.rmse"] / free["on"]["depth.rmse"]
    print(f"label-free: moving-panel RMSE {free['on']['depth.rmse']:.3f} (scene flow) vs "
          f"{free['off']['depth.rmse']:.3f} (depth only), ratio {ratio:.2f}")
    sup = _pair(E.sceneflow_supervised_config, args.seed)
    epe_ratio = sup["off"]["sceneflow.epe"] / sup["on"]["sceneflow.epe"]
    print(f"with depth labels: scene-flow EPE {sup['on']['sceneflow.epe']:.4f} m vs "
          f"{sup['off']['sceneflow.epe']:.4f} m, ratio {epe_ratio:.1f}")
    save(args.out, "sf_ablation", list(free.values()))
    save(args.out, "sf_supervised", list(sup.values()))
    return 0 if ratio >= 2 else 1


if __name__ == "__main__":
    sys.exit(main())
