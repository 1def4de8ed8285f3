"""
Multiplication counts at equal parameter budgets
================================================

A GCN layer of width h1 has h1^2 weights and a CARE layer of width h2 has
4 h2^2 + h2, so matching budgets gives h1 = sqrt(4 h2^2 + h2) > 2 h2. The
GCN then needs more multiplications, and the VC bound alpha (d q)^2 with it.
"""

import numpy as np

from care import vcbound as vc

print(vc.format_table([vc.theorem1_check(10, 4, 1), vc.theorem1_check(10, 4, 4), vc.theorem1_check(28, 146, 4)]))

# exact integer counts for an explicit schedule
gcn, care = vc.VcProfile.gcn(10, 4), vc.VcProfile.care(10, 4)
print("multiplications", vc.mults_gcn(gcn), vc.mults_care(care))
print("parameters", vc.param_counts(gcn, care))

# the gap n^2 (sqrt(4 h2^2 + h2) - 2 h2) climbs towards n^2 / 4
for h2 in (1, 4, 16, 146, 4096):
    print(h2, vc.theorem1_check(10, h2).difference)

reports = vc.sweep(range(1, 101), range(1, 257), (1, 2, 4))
print(len(reports), "cells, all verdicts true:", all(r.verdict for r in reports))
print("bound ratio GCN/CARE, n=10 h2=4:", np.round(vc.theorem1_check(10, 4).bound_ratio, 4))
