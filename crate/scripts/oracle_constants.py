#!/usr/bin/env python3
"""Extended-precision oracle for the closed-form constants frozen into the
Rust test suite.

Evaluates the mean-reverting diffusion's schedule and kernel moments with
50-digit arithmetic (mpmath) so the f64 implementation can be checked to
1e-12 relative error. Run:

    python3 scripts/oracle_constants.py

and copy the printed values into the tests that cite this script.
"""

from mpmath import mp, mpf, exp, log, sqrt

mp.dps = 50

GAMMA = mpf("1.5")
SIGMA_MIN = mpf("0.05")
SIGMA_MAX = mpf("0.5")
T_EPS = mpf("0.03")


def g(t):
    """Diffusion coefficient g(t) = sigma_min * (sigma_max/sigma_min)^t * sqrt(2 log(sigma_max/sigma_min))."""
    r = SIGMA_MAX / SIGMA_MIN
    return SIGMA_MIN * r**t * sqrt(2 * log(r))


def kernel_variance(t, gamma=GAMMA):
    """Per-real-coordinate variance sigma(t)^2 of the perturbation kernel."""
    r = SIGMA_MAX / SIGMA_MIN
    logr = log(r)
    return SIGMA_MIN**2 * (r ** (2 * t) - exp(-2 * gamma * t)) * logr / (gamma + logr)


def show(name, value):
    print(f"{name:34s} = {mp.nstr(value, 22)}")


def main():
    print("# schedule defaults: gamma=1.5, sigma_min=0.05, sigma_max=0.5")
    show("g(0)", g(0))
    show("g(1)", g(1))
    show("g(1)^2", g(1) ** 2)
    show("exp(-gamma)", exp(-GAMMA))
    show("exp(-2*gamma)", exp(-2 * GAMMA))

    for t in ("0.03", "0.25", "0.5", "1"):
        show(f"sigma({t})^2", kernel_variance(mpf(t)))
    show("sigma(1)", sqrt(kernel_variance(mpf(1))))
    show("-1/sigma(1)", -1 / sqrt(kernel_variance(mpf(1))))

    print("\n# scalar toy marginal: x0 ~ N(0,1) per coordinate, y = 0.5")
    m0, s0sq, y = mpf(0), mpf(1), mpf("0.5")
    for t in (T_EPS, mpf("0.5"), mpf(1)):
        mean = exp(-GAMMA * t) * m0 + (1 - exp(-GAMMA * t)) * y
        var = exp(-2 * GAMMA * t) * s0sq + kernel_variance(t)
        show(f"marginal mean(t={mp.nstr(t, 4)})", mean)
        show(f"marginal var(t={mp.nstr(t, 4)})", var)

    print("\n# marginal-score spot check: m0=0, s0^2=1, y=0.5, gamma=1.5, t=0.5, x_t=0")
    t = mpf("0.5")
    mean = (1 - exp(-GAMMA * t)) * y
    var = exp(-2 * GAMMA * t) + kernel_variance(t)
    show("score(0)", -(0 - mean) / var)

    print("\n# adam: single step from zero state, scalar gradient 1, lr=1e-4")
    lr, b1, b2, eps = mpf("1e-4"), mpf("0.9"), mpf("0.999"), mpf("1e-8")
    grad = mpf(1)
    m_hat = ((1 - b1) * grad) / (1 - b1)
    v_hat = ((1 - b2) * grad**2) / (1 - b2)
    show("update", -lr * m_hat / (sqrt(v_hat) + eps))

    print("\n# stiffness criterion synthetic cases: E[|x0-y|^2] = 0.01")
    for gamma in (mpf("1.5"), mpf("0.5")):
        show(f"0.01*exp(-2*{mp.nstr(gamma, 3)})", mpf("0.01") * exp(-2 * gamma))

    print("\n# corrector step size with |z| = |s| and r = 0.33")
    show("eps", 2 * mpf("0.33") ** 2)


if __name__ == "__main__":
    main()
