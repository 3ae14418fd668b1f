# Time the permutation build against a linear-correlation baseline.
#
# $ python demos/bench_operator.py
#
# Same measurement the `paiconv bench` subcommand writes to CSV: median of
# repeated runs, one row per (op, n, K, L).  The dot-product scoring needs
# one matmul per cloud; the correlation baseline materializes per-kernel
# distances, so it carries an extra K*L*3 intermediate.

from paiconv import bench_permutation, stream

print("op,n,K,L,median_ms")
for n in (1024, 4096):
    for rep in bench_permutation(n, 16, 16, repeats=5, rng=stream(0, "bench")):
        ms = rep.median_ns / 1e6
        print(f"{rep.op},{rep.sizes['n']},{rep.sizes['K']},{rep.sizes['L']},{ms:.2f}")
