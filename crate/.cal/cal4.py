from calibrate import *
import itertools

CFGS = {
 "std":      [(1,16,1),(6,24,2),(6,32,3),(6,64,4),(6,96,3),(6,160,3),(6,320,1)],
 "no320":    [(1,16,1),(6,24,2),(6,32,3),(6,64,4),(6,96,3),(6,160,3)],
 "c160n2":   [(1,16,1),(6,24,2),(6,32,3),(6,64,4),(6,96,3),(6,160,2),(6,320,1)],
}
def build(policy, cfg, stem_s, strides, nclass=100, last_ch=1280):
    net = Net(); f = 32 // stem_s
    net.conv(3, 32, 3, f); net.bn(32)
    cin = 32
    for (t_exp,c,nblk), stride in zip(cfg, strides):
        for b in range(nblk):
            s = stride if b == 0 else 1
            fout = f // s
            m, n = cin, c
            hidden = m * t_exp
            if t_exp != 1:
                net.conv(m, hidden, 1, f); net.bn(hidden)
            net.conv(hidden, hidden, 3, fout, groups(policy, hidden)); net.bn(hidden)
            net.conv(hidden, n, 1, fout); net.bn(n)
            cin, f = n, fout
    net.conv(cin, last_ch, 1, f); net.bn(last_ch)
    net.fc = (last_ch, nclass)
    return net

results = []
for name, cfg in CFGS.items():
    ns = len(cfg)
    for stem_s in (1,2):
        for st in itertools.product((1,2), repeat=ns):
            f = 32 // stem_s
            for s in st: f //= s
            if f < 1: continue
            worst = 0; errs = []; perrs = []
            for i,pol in enumerate(POLICIES):
                net = build(pol, cfg, stem_s, list(st))
                p,fl = net.totals(True, True)
                tf = FLOPS[("mv2","R")][i]*1e6; tp = PARAMS[("mv2","R")][i]*1e6
                e = 100*(fl-tf)/tf; ep = 100*(p-tp)/tp
                errs.append(e); perrs.append(ep)
                worst = max(worst, abs(e), abs(ep))
            results.append((worst, name, stem_s, st, errs, perrs))
results.sort()
for worst, name, stem_s, st, errs, perrs in results[:6]:
    print(f"worst={worst:6.2f}% {name:8s} stem={stem_s} strides={st}")
    print("   flop%: " + " ".join(f"{e:+6.2f}" for e in errs))
    print("  param%: " + " ".join(f"{e:+6.2f}" for e in perrs))
