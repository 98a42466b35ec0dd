"""
Checking hand-written gradients
===============================

Every backward pass in the package is compared against central finite
differences. A deliberately wrong gradient shows what a failure looks like.
"""

import numpy as np

from compcnn import Param, finite_diff_check
from compcnn.gradcheck import gradient_suite

for name, report in gradient_suite(seed=0):
    print(f"{name:22s} max relative error {report.max_rel_error:.2e}  {'ok' if report.passed else 'FAIL'}")

# The analytic gradient of 0.5*|theta|^2 is theta; doubling it is caught
theta = Param(np.array([0.3, -1.2, 2.0]), name="theta")


def wrong_loss():
    theta.grad += 2 * theta.value
    return 0.5 * float(theta.value @ theta.value)


report = finite_diff_check(wrong_loss, [theta])
print("\nwith a doubled gradient:")
print(report)
