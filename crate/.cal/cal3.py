from calibrate import *
from cal2 import build_mv2v
import itertools, math

best = []
for stem_s in (1,2):
    for st in itertools.product((1,2), repeat=7):
        f = 32 // stem_s
        for s in st: f //= s
        if f < 1: continue
        worst = 0
        errs = []
        try:
            for i,pol in enumerate(POLICIES):
                net = build_mv2v(pol, stem_s, list(st))
                p,fl = net.totals(True, True)
                tf = FLOPS[("mv2","R")][i]*1e6
                e = 100*(fl-tf)/tf
                errs.append(e)
                worst = max(worst, abs(e))
        except Exception:
            continue
        best.append((worst, stem_s, st, errs))
best.sort()
for worst, stem_s, st, errs in best[:8]:
    print(f"worst={worst:6.2f}% stem={stem_s} strides={st} errs=" + " ".join(f"{e:+6.2f}" for e in errs))
