import argparse
import math

import bohmgrav
from bohmgrav.export import write_table

parser = argparse.ArgumentParser()
parser.add_argument("--level", type=int, default=4, help="disk refinement level")
parser.add_argument("--sigma", type=float, default=4.0 * math.pi)
parser.add_argument(
    "--epsilons",
    type=float,
    nargs="+",
    default=[0.2, 0.1, 0.05, 0.025],
    help="strictly decreasing values of epsilon",
)
parser.add_argument("--path", type=str, default="semiclassical.csv")
args = parser.parse_args()


def main() -> None:
    mesh = bohmgrav.build_disk_mesh(args.level)
    record = bohmgrav.epsilon_sweep(mesh, args.sigma, args.epsilons)

    print(f"classical Fermi level {record.fermi_star:.6f}")
    for entry in record.entries:
        print(
            f"eps={entry.epsilon:<8g} converged={entry.converged!s:<5} "
            f"|u - sigma*phi|={entry.u_phi_gap:.3e} |phi - phi*|={entry.phi_gap:.3e}"
        )
    # Halving epsilon should roughly halve the gap once the sweep is in the asymptotic regime.
    print("gap ratios:", ", ".join(f"{r:.3f}" for r in record.gap_ratios()))

    failed = [c.name for c in record.checks() if not c.passed]
    if failed:
        print("energy orderings violated:", ", ".join(failed))

    write_table(
        args.path,
        ["epsilon", "converged", "fermi_level", "u_phi_gap", "phi_gap"],
        [
            [e.epsilon, e.converged, e.fermi_level, e.u_phi_gap, e.phi_gap]
            for e in record.entries
        ],
    )


if __name__ == "__main__":
    main()
