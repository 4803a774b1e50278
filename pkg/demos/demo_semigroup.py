"""Compressing an operator in one step or in two gives the same coarse
tensors.

    python demos/demo_semigroup.py
"""

import numpy as np

from metric_upscaling.media import MediumSpec, generate
from metric_upscaling.mesh import build_disk_mesh
from metric_upscaling.upscale import upscale_operator


def main(fine=5, middle=3, coarse=1):
    hier = build_disk_mesh(fine, project_levels=coarse)
    a = generate(hier[fine], MediumSpec("trigonometric"))

    direct = upscale_operator(a, hier, coarse, fine)
    staged = upscale_operator(upscale_operator(a, hier, middle, fine), hier, coarse, middle)

    gap = np.abs(direct - staged).max() / np.abs(a.per_triangle).max()
    print(f"levels {fine} -> {coarse} directly vs via {middle}: relative gap {gap:.2e}")

    # the compressed tensors are generally nonsymmetric
    skew = np.abs(direct - direct.transpose(0, 2, 1)).max()
    print(f"largest skew part of the level-{coarse} tensors: {skew:.3e}")


if __name__ == "__main__":
    main()
