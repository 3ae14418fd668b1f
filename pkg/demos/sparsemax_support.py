# Compare sparsemax and softmax attention over a real neighborhood.
#
# $ python demos/sparsemax_support.py
#
# Each kernel direction scores all K neighbors by dot product; sparsemax
# projects the scores onto the simplex and zeroes everything far from the
# winner, softmax keeps every weight strictly positive.  The sparse columns
# are what let a single neighbor own a kernel slot.

import numpy as np

from paiconv import PointCloud, build_permutation, fibonacci_lattice
from paiconv import knn_bruteforce, stream
from paiconv.conv import local_positions

rng = stream(0, "sampling")
coords = rng.standard_normal((200, 3))
cloud = PointCloud(coords)
nbr = knn_bruteforce(cloud, 40)
rel = local_positions(cloud, nbr)
kernel = fibonacci_lattice(32).points

for mode in ("sparsemax", "softmax"):
    m = build_permutation(rel, kernel, mode)
    cols = m[:, :, 1:]              # column 0 is the fixed center indicator
    support = (cols > 1e-12).mean()
    peak = cols.max(axis=1).mean()
    print(f"{mode:10s} mean support {support:5.1%} of K=40, "
          f"mean column peak {peak:.3f}")

print("\none sparsemax column (40 neighbor weights for kernel direction 1):")
m = build_permutation(rel[:1], kernel, "sparsemax")
print(np.array2string(m[0, :, 1], precision=3, suppress_small=True))
