"""Ground-range error caused by a height error, as a function of camera height.

The camera is aimed at a ground point at fixed range, so the point always
sits on the principal-point pixel. The lifted displacement is compared with
the closed form |dh| * r / (H - h).
"""
import argparse

from bevlift.scene import error_law_at_range


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--heights", type=float, nargs="+", default=[1.5, 3.0, 5.0, 10.0])
    ap.add_argument("--ranges", type=float, nargs="+", default=[10.0, 30.0, 60.0])
    ap.add_argument("--delta-h", type=float, default=0.1)
    args = ap.parse_args()

    print("camera_height,ground_range,range_error,closed_form")
    for r in args.ranges:
        for h in args.heights:
            e = error_law_at_range(h, r, 0.0, args.delta_h)
            print(f"{h},{r},{e.range_error:.6f},{e.closed_form:.6f}")


if __name__ == "__main__":
    main()
