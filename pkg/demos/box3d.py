"""Three-dimensional box with a sinusoidal injection patch.

A box of tetrahedra with flux injected through a patch on one face and
pressure held on the opposite face. Thread count is controlled with
--threads; numba must be started with at least that many threads
(NUMBA_NUM_THREADS).

    python demos/box3d.py --n 25 25 12 --threads 1
"""

import argparse

from darcyvi import RunConfig, run_box3d

parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
parser.add_argument("--n", type=int, nargs=3, default=[25, 25, 12])
parser.add_argument("--threads", type=int, default=None)
parser.add_argument("--out", default=None)
args = parser.parse_args()

summary, fields, sol = run_box3d(RunConfig(preset="box3d", box_n=tuple(args.n), threads=args.threads,
                                           out=args.out))
row = summary["table"]
print(f"{row['dofs']} dofs")
print(f"Newton {row['snes']} steps / {row['ksp']} GMRES iterations in {row['time']:.2f} s")
print(f"{row['violations_before']} violating cells ({row['violations_percent']:.2f}%) before, "
      f"{row['violations_after']} after")
print(f"VI {row['vi_snes']} steps / {row['vi_ksp']} GMRES iterations in {row['vi_time']:.2f} s")
