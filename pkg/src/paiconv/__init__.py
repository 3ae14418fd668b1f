"""Permutable anisotropic point-cloud convolution and a small training stack.

The operator resamples each point's K nearest neighbors onto L canonical
kernel directions with a sparsemax attention matrix, then applies one
shared anisotropic filter.  Everything here is plain float64 numpy:
neighbor search, the operator and its gradients, a small classifier,
SGD training, synthetic data, benchmarking, and self-verification.
"""

from .bench import (BenchReport, bench_permutation, estimate_forward_bytes,
                    max_points_probe, write_bench_csv)
from .checks import CheckResult, run_checks
from .conv import VARIANTS, PaiConvLayer, build_permutation, make_variant
from .dataio import (AugmentConfig, Dataset, Mesh, ParseError, augment,
                     load_manifest, normalize_unit_sphere, parse_off,
                     parse_xyz, sample_mesh, synth_shapes, write_xyz)
from .lattice import (KernelLattice, fibonacci_lattice, random_lattice,
                      uniformity_stats)
from .neighbors import (NeighborIndex, PointCloud, knn_bruteforce, knn_grid,
                        random_downsample)
from .netcls import (Classifier, ClassifierConfig, backward_logits, build,
                     cross_entropy, forward_logits, load_checkpoint,
                     save_checkpoint)
from .numkit import ContractError, elu, sparsemax, sparsemax_grad, stream
from .train import (Metrics, SgdMomentum, TrainConfig, cosine_lr, evaluate,
                    fit, run_ablation, summarize_ablation, train_epoch)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "BenchReport", "CheckResult", "Classifier",
    "ClassifierConfig", "ContractError", "Dataset", "KernelLattice",
    "Mesh", "Metrics", "NeighborIndex", "PaiConvLayer", "ParseError",
    "PointCloud", "SgdMomentum", "TrainConfig", "VARIANTS", "augment",
    "backward_logits", "bench_permutation", "build", "build_permutation",
    "cosine_lr", "cross_entropy", "elu", "estimate_forward_bytes", "evaluate",
    "fibonacci_lattice", "fit", "forward_logits", "knn_bruteforce", "knn_grid",
    "load_checkpoint", "load_manifest", "make_variant", "max_points_probe",
    "normalize_unit_sphere", "parse_off", "parse_xyz", "random_downsample",
    "random_lattice", "run_ablation", "run_checks", "sample_mesh",
    "save_checkpoint", "sparsemax", "sparsemax_grad", "stream",
    "summarize_ablation", "synth_shapes", "train_epoch", "uniformity_stats",
    "write_bench_csv", "write_xyz",
]
