"""Compare every backward rule against central finite differences.

Run: python demos/02_gradient_check.py [trials]
"""

import sys

from bacnn.gradcheck import run_suite

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 10
for r in run_suite(trials=trials):
    print(f"{'ok ' if r.passed else 'BAD'} {r.op:<16} worst relative error {r.max_rel_err:.2e}")
