"""Flow/motion consistency term on / off with the ground-truth reference flow.

Both arms run the same fixed iteration budget on the moving-panel scene.
"""
import sys

from _common import parser, save

from flowdepth import experiments as E


def main(argv=None):
    ap = parser(__doc__)
    ap.add_argument("--iters", type=int, default=2000)
    args = ap.parse_args(argv)
    rows = []
    for arm, on in (("on", True), ("off", False)):
        res = E.run_experiment(E.opt_mot_ablation_config(on, seed=args.seed,
                                                         optimizer={"max_iter": args.iters}))
        rows.append({"arm": arm, "seconds": res.seconds, **res.record})
        print(f"opt_mot {arm:3s}: AbsRel {res.record['depth.abs_rel']:.5f} ({res.seconds:.1f} s)")
    save(args.out, "opt_mot_ablation", rows)
    return 0 if rows[0]["depth.abs_rel"] < rows[1]["depth.abs_rel"] else 1


if __name__ == "__main__":
    sys.exit(main())
