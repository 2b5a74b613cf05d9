import argparse
import math

import bohmgrav
from bohmgrav.export import export_field

parser = argparse.ArgumentParser()
parser.add_argument("--epsilon", type=float, default=1e-3)
parser.add_argument("--sigma", type=float, default=10.0 * math.pi)
parser.add_argument("--points", type=int, default=100_000)
parser.add_argument("--grading", type=float, default=3.0, help="clustering toward r = 0")
parser.add_argument("--path", type=str, default="radial.csv")
args = parser.parse_args()


def main() -> None:
    bohmgrav.set_log_level("INFO")

    params = bohmgrav.ModelParams(args.epsilon, args.sigma)
    # Beyond 8π the uniform start is far from the concentrated state; ramp σ up from 0.
    config = bohmgrav.IterationConfig(continuation_steps=10)
    state = bohmgrav.radial_solve(params, args.points, config, grading=args.grading)

    print(f"fermi level {state.fermi_level:.4f} after {state.picard_iterations} picard iterations")
    print(f"density range [{state.n.min():.4e}, {state.n.max():.4e}]")
    for check in state.checks():
        print(f"{check.name}: {check.describe()}")

    export_field(state.grid, {"u": state.u, "phi": state.phi, "n": state.n}, "csv", args.path)


if __name__ == "__main__":
    main()
