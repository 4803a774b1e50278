"""One-dimensional cascade: exact solutions, the limit measures and the
multifractal spectrum of the binomial weights.

    python demos/demo_oned.py
"""

import numpy as np

from metric_upscaling.oned import (binomial_measure, cascade, cdf_distance,
                                   convergence_experiment, large_deviation_rate,
                                   legendre_exact, measures, spectrum)


def main(a=0.6, b=-0.6):
    U = np.array([a / 2, b / 2])
    m0 = np.exp(a) / (np.exp(a) + np.exp(b))
    print(f"binomial weight m0 = {m0:.4f}")

    # the e^{2V} measure of the cascade approaches the binomial measure
    for n in (4, 8, 12):
        mu_plus, _, _ = measures(cascade(U, n=n))
        print(f"  n = {n:2d}  CDF distance to binomial: "
              f"{cdf_distance(mu_plus, binomial_measure(m0, n)):.2e}")

    print("\nsup distance to the limit solution")
    for n, dist in convergence_experiment(U, n_list=(2, 4, 6, 8)):
        print(f"  n = {n}  {dist:.3e}")

    alpha = np.linspace(-np.log2(m0), -np.log2(1 - m0), 5)
    table = spectrum(m0, np.linspace(-40, 40, 8001), alpha)
    print("\nalpha     c*(grid)  c*(exact)  rate n=400")
    for al, cs, ce in zip(alpha, table.c_star, legendre_exact(m0, alpha)):
        rate = large_deviation_rate(m0, 400, al, 0.01)
        print(f"{al:.4f}  {cs:9.4f}  {ce:9.4f}  {rate:9.4f}")


if __name__ == "__main__":
    main()
