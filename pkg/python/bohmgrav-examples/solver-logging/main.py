import logging
import math

import bohmgrav

# The bohmgrav module provides a set_log_level function for convenience in scripts, which will call
# logging.basicConfig() for you. For larger applications, configure logging yourself.

# Debug level by default, and specify a format
logging.basicConfig(
    level=logging.DEBUG,
    format="%(asctime)s [%(levelname)s:%(name)s] %(message)s",
)

# Only info logs from bohmgrav as a whole
bohmgrav.set_log_level("INFO")

# Per-iteration Newton progress is logged at DEBUG by the quantum module; keep it, but quiet the
# operator cache and mesh construction.
logging.getLogger("bohmgrav.quantum").setLevel(logging.DEBUG)
logging.getLogger("bohmgrav.fem").setLevel(logging.WARNING)
logging.getLogger("bohmgrav.mesh").setLevel(logging.WARNING)

logger = logging.getLogger("logging-example")


def main() -> None:
    mesh = bohmgrav.build_disk_mesh(3)
    for sigma in (2.0 * math.pi, 4.0 * math.pi, 6.0 * math.pi):
        state = bohmgrav.picard_fixed_point(mesh, bohmgrav.ModelParams(0.1, sigma))
        logger.debug("sigma=%.4f fermi=%.6f", sigma, state.fermi_level)


if __name__ == "__main__":
    main()
