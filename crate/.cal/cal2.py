from calibrate import *

# MV2 stride search: (stem_stride, per-stage strides)
mv2_variants = {
 "cifar_a": (1,[1,1,2,2,1,2,1]),   # final 4x4
 "cifar_b": (1,[1,2,2,2,1,2,1]),   # final 2x2
 "imagenet":(2,[1,2,2,2,1,2,1]),   # final 1x1
 "cifar_c": (2,[1,1,2,2,1,2,1]),   # final 2x2
 "cifar_d": (1,[1,2,2,1,1,2,1]),   # final 4x4 alt
 "cifar_e": (1,[1,1,2,2,1,1,1]),   # final 8x8
}
def build_mv2v(policy, stem_s, strides, nclass=100, last_ch=1280):
    net = Net(); f = 32 // stem_s
    net.conv(3, 32, 3, f); net.bn(32)
    cin = 32
    cfg = [(1,16,1),(6,24,2),(6,32,3),(6,64,4),(6,96,3),(6,160,3),(6,320,1)]
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

print("== MV2 stride variants (count_bn=1 count_fc=1) ==")
for name,(ss,st) in mv2_variants.items():
    perr=[];ferr=[]
    for i,pol in enumerate(POLICIES):
        net = build_mv2v(pol, ss, st)
        p,fl = net.totals(True, True)
        perr.append(100*(p-PARAMS[("mv2","R")][i]*1e6)/(PARAMS[("mv2","R")][i]*1e6))
        ferr.append(100*(fl-FLOPS[("mv2","R")][i]*1e6)/(FLOPS[("mv2","R")][i]*1e6))
    print(f"{name:9s} param%: " + " ".join(f"{e:+6.2f}" for e in perr))
    print(f"{name:9s} flop %: " + " ".join(f"{e:+6.2f}" for e in ferr))

print()
print("== WRN/ResNet pair=B flag scan ==")
import itertools
fams = [("wrn22x2", lambda p,r,bip: build_wrn(22,2,p,r,"B",bip)),
        ("wrn22x10",lambda p,r,bip: build_wrn(22,10,p,r,"B",bip)),
        ("wrn28x2", lambda p,r,bip: build_wrn(28,2,p,r,"B",bip)),
        ("wrn40x2", lambda p,r,bip: build_wrn(40,2,p,r,"B",bip)),
        ("resnet18",lambda p,r,bip: build_resnet18(p,r,"B",bip))]
for bip, cbn, cfc in itertools.product([False,True],[False,True],[False,True]):
    worst=0; wc=None
    for fam,builder in fams:
        for res,tag in [(True,"R"),(False,"NR")]:
            for i,pol in enumerate(POLICIES):
                net = builder(pol,res,bip)
                p,fl = net.totals(cbn,cfc)
                tp=PARAMS[(fam,tag)][i]*1e6; tf=FLOPS[(fam,tag)][i]*1e6
                for q,e in (("P",100*(p-tp)/tp),("F",100*(fl-tf)/tf)):
                    if abs(e)>worst: worst,wc=abs(e),(fam,tag,POLICIES[i],q,round(e,2))
    print(f"bn_in_pair={int(bip)} count_bn={int(cbn)} count_fc={int(cfc)}: worst={worst:6.2f}% at {wc}")
