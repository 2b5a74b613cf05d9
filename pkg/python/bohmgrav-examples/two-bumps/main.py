import argparse
import math

import bohmgrav
from bohmgrav.diagnostics import compare_bump_solutions
from bohmgrav.export import export_field

parser = argparse.ArgumentParser()
parser.add_argument("--level", type=int, default=4, help="disk refinement level")
parser.add_argument("--epsilon", type=float, default=0.05)
parser.add_argument("--sigma", type=float, default=10.0 * math.pi)
parser.add_argument("--width", type=float, default=0.1, help="bump standard deviation")
parser.add_argument("--out", type=str, default=".")
args = parser.parse_args()


def main() -> None:
    bohmgrav.set_log_level("INFO")

    mesh = bohmgrav.build_disk_mesh(args.level)
    params = bohmgrav.ModelParams(args.epsilon, args.sigma)
    threshold = bohmgrav.uniqueness_threshold(2, args.epsilon)
    print(f"uniqueness guaranteed for |sigma| < {threshold.sigma_max:.4f}")

    # Beyond the threshold, a bump started off-centre may settle into a different state than one
    # started at the origin.
    config = bohmgrav.IterationConfig(bump_width=args.width)
    result = compare_bump_solutions(mesh, params, config, ((0.0, 0.0), (0.4, 0.0)))

    for i, state in enumerate(result.states, start=1):
        print(
            f"state {i}: fermi={state.fermi_level:.6f} peak={result.peaks[i - 1]} "
            f"picard={state.picard_iterations}"
        )
        export_field(
            mesh,
            {"u": state.u, "phi": state.phi, "n": state.n},
            "vtk",
            f"{args.out}/state{i}.vtk",
        )
    print(f"fermi gap {result.fermi_gap:.3e}, density L1 gap {result.density_l1_gap:.3e}")


if __name__ == "__main__":
    main()
