from calibrate import *
import itertools

CFG = [(1,16,1),(6,24,2),(6,32,3),(6,64,4),(6,96,3),(6,160,3),(6,320,1)]

def build(policy, stem_s, strides, mode, nclass=100):
    net = Net(); f = 32 // stem_s
    net.conv(3, 32, 3, f); net.bn(32)
    cin = 32
    for (t_exp,c,nblk), stride in zip(CFG, strides):
        for b in range(nblk):
            first = (b == 0) if mode != "last" else (b == nblk-1)
            s = stride if first else 1
            fout = f // s
            m, n = cin, c
            hidden = m * t_exp
            if t_exp != 1:
                net.conv(m, hidden, 1, f); net.bn(hidden)
            f3 = f if mode == "fin" else fout
            net.conv(hidden, hidden, 3, f3, groups(policy, hidden)); net.bn(hidden)
            net.conv(hidden, n, 1, fout); net.bn(n)
            cin, f = n, fout
    net.conv(cin, 1280, 1, f); net.bn(1280)
    net.fc = (1280, nclass)
    return net

results = []
for mode in ("first","last","fin"):
    for stem_s in (1,2):
        for st in itertools.product((1,2), repeat=7):
            f = 32 // stem_s
            for s in st: f //= s
            if f < 1: continue
            worst = 0; errs = []
            for i,pol in enumerate(POLICIES):
                net = build(pol, stem_s, list(st), mode)
                p,fl = net.totals(True, True)
                tf = FLOPS[("mv2","R")][i]*1e6
                e = 100*(fl-tf)/tf
                errs.append(e); worst = max(worst, abs(e))
            results.append((worst, mode, stem_s, st, errs))
results.sort()
for worst, mode, stem_s, st, errs in results[:5]:
    print(f"worst={worst:6.2f}% mode={mode:5s} stem={stem_s} strides={st}  " +
          " ".join(f"{e:+6.2f}" for e in errs))
