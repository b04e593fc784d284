#!/usr/bin/env python3
"""Regenerates the bundled synthetic network files in data/.

Two networks ship with the repository:
  desk7.net         7 segments, 4 windkessel beds, 4 observed segments
  full_arterial.net 116 segments, 46 windkessel beds, 10 observed segments

Placeholder capacitances are sized per observed segment so that the local
time constant (driving-point resistance times capacitance) lands on
TAU_TARGET, which keeps the fixed-step training integrator well inside the
rk4 stability region while staying far below the pulse period. Inertances
put the LC resonance at OMEGA0.
"""

import json
import math
import numpy as np

MU = 4.0e-3          # Pa s
RHO = 1060.0         # kg/m^3
TAU_TARGET = 8e-3    # s, placeholder time constant
OMEGA0 = 2 * math.pi * 2.5  # rad/s, LC resonance
TAU_WK = 3.3         # s, windkessel decay; slow beds keep the pulse
                     # amplitude moderate and cycles 2/3 nearly identical
MAP_OFFSET = 1.2e4   # Pa above venous at mean flow
VENOUS = 667.0       # Pa
SV = 7e-5            # m^3
BPM = 73.0


def pipe_resistance(length, d):
    return 128.0 * MU * length / (math.pi * d ** 4)


def driving_point_resistance(segments, terminals, node_ids, clamp_nodes, probe):
    """Resistance seen at `probe` with clamp_nodes grounded and windkessel
    compliance pressures held fixed behind their proximal resistors."""
    n = len(node_ids)
    idx = {name: i for i, name in enumerate(node_ids)}
    unknown = [name for name in node_ids if name not in clamp_nodes or name == probe]
    uidx = {name: i for i, name in enumerate(unknown)}
    G = np.zeros((len(unknown), len(unknown)))
    b = np.zeros(len(unknown))

    def stamp(a, bnode, g):
        ia = uidx.get(a)
        ib = uidx.get(bnode)
        if ia is not None:
            G[ia, ia] += g
        if ib is not None:
            G[ib, ib] += g
        if ia is not None and ib is not None:
            G[ia, ib] -= g
            G[ib, ia] -= g

    for seg in segments:
        d = 0.5 * (seg["inlet_diameter"] + seg["outlet_diameter"])
        stamp(seg["from"], seg["to"], 1.0 / pipe_resistance(seg["length"], d))
    for node, wk in terminals.items():
        ia = uidx.get(node)
        if ia is not None:
            G[ia, ia] += 1.0 / wk["r_proximal"]
    b[uidx[probe]] = 1.0
    p = np.linalg.solve(G, b)
    return p[uidx[probe]]


def finish(segments, terminals, observed, path, name):
    node_ids = []
    seen = set()
    for seg in segments:
        for n in (seg["from"], seg["to"]):
            if n not in seen:
                seen.add(n)
                node_ids.append(n)

    to_node = {seg["id"]: seg["to"] for seg in segments}
    obs_nodes = {to_node[s] for s in observed}
    cap = {}
    inert = {}
    for s in observed:
        probe = to_node[s]
        clamps = obs_nodes - {probe}
        r_eff = driving_point_resistance(segments, terminals, node_ids, clamps, probe)
        c = TAU_TARGET / r_eff
        cap[s] = float(f"{c:.4g}")
        inert[s] = float(f"{1.0 / (OMEGA0 ** 2 * c):.4g}")
        print(f"  {name} {s}: R_eff={r_eff:.3e}  C={cap[s]:.3e}  L={inert[s]:.3e}")

    net = {
        "schema_version": 1,
        "fluid": {"density": RHO, "dynamic_viscosity": MU},
        "segments": segments,
        "terminals": terminals,
        "observed": observed,
        "placeholder": {
            "capacitance": cap,
            "inertance": inert,
            "reference_pressure": -1.0,
        },
    }
    with open(path, "w") as f:
        json.dump(net, f, indent=1)
        f.write("\n")
    print(f"wrote {path}: {len(segments)} segments, {len(terminals)} terminals, "
          f"{len(observed)} observed")


def segment(sid, a, b, length, d_in, d_out, modulus):
    d = 0.5 * (d_in + d_out)
    return {
        "id": sid, "from": a, "to": b, "length": length,
        "inlet_diameter": d_in, "outlet_diameter": d_out,
        "wall_thickness": round(0.1 * d, 6), "elastic_modulus": modulus,
    }


def windkessel(n_beds):
    r_total = MAP_OFFSET / (RHO_FLOW := SV / (60.0 / BPM))
    r_bed = n_beds * r_total
    r1 = 0.06 * r_bed
    r2 = r_bed - r1
    return {
        "r_proximal": float(f"{r1:.4g}"),
        "r_distal": float(f"{r2:.4g}"),
        "compliance": float(f"{TAU_WK / r2:.4g}"),
        "venous_pressure": VENOUS,
    }


def make_desk7():
    segs = [
        segment("s1", "n0", "n1", 0.10, 0.014, 0.012, 4.0e5),
        segment("s2", "n1", "n2", 0.08, 0.008, 0.008, 7.0e5),
        segment("s3", "n1", "n3", 0.08, 0.008, 0.008, 7.0e5),
        segment("s4", "n2", "n4", 0.07, 0.005, 0.005, 1.2e6),
        segment("s5", "n2", "n5", 0.07, 0.005, 0.005, 1.2e6),
        segment("s6", "n3", "n6", 0.07, 0.005, 0.005, 1.2e6),
        segment("s7", "n3", "n7", 0.07, 0.005, 0.005, 1.2e6),
    ]
    wk = windkessel(4)
    terminals = {n: dict(wk) for n in ("n4", "n5", "n6", "n7")}
    finish(segs, terminals, ["s1", "s3", "s4", "s7"], "data/desk7.net", "desk7")


def make_full():
    rng = np.random.default_rng(20240416)
    segs = []
    counter = [0]

    def new_node():
        counter[0] += 1
        return f"n{counter[0]}"

    sid = [0]

    def new_seg(a, b, length, d_in, d_out, modulus):
        sid[0] += 1
        return segment(f"a{sid[0]}", a, b, length, round(d_in, 5),
                       round(d_out, 5), modulus)

    # binary tree with 46 leaves; frontier nodes carry their inlet diameter
    frontier = []
    root = "n0"
    leaves = []

    def diameter_children(d):
        return max(0.003, 0.80 * d)

    def modulus_for(d):
        return round(4.0e5 * (0.016 / d) ** 0.6, -3)

    def length_for(d, r):
        return round(float(0.05 + 0.07 * d / 0.024 + 0.01 * r), 4)

    frontier.append((root, 0.024))
    while len(frontier) + len(leaves) < 46:
        # split the widest frontier node into two children
        frontier.sort(key=lambda t: (-t[1], t[0]))
        node, d = frontier.pop(0)
        dc = diameter_children(d)
        for _ in range(2):
            child = new_node()
            segs.append(new_seg(node, child, length_for(dc, rng.uniform()),
                                d * 0.94, dc, modulus_for(dc)))
            frontier.append((child, dc))
    leaves = list(frontier)  # 46 tips, each still needs its own bed

    # subdivide the 26 widest segments into two to reach 116 segments
    segs.sort(key=lambda s: -0.5 * (s["inlet_diameter"] + s["outlet_diameter"]))
    to_split = segs[:26]
    rest = segs[26:]
    new_list = []
    for s in to_split:
        mid = new_node()
        d_mid = 0.5 * (s["inlet_diameter"] + s["outlet_diameter"])
        first = new_seg(s["from"], mid, round(s["length"] / 2, 4),
                        s["inlet_diameter"], d_mid, s["elastic_modulus"])
        second = new_seg(mid, s["to"], round(s["length"] / 2, 4), d_mid,
                         s["outlet_diameter"], s["elastic_modulus"])
        new_list.extend([first, second])
    segs = new_list + rest

    # stable declaration order: BFS from the root
    children = {}
    for s in segs:
        children.setdefault(s["from"], []).append(s)
    ordered = []
    queue = [root]
    while queue:
        node = queue.pop(0)
        for s in sorted(children.get(node, []), key=lambda s: s["id"]):
            ordered.append(s)
            queue.append(s["to"])
    segs = ordered

    wk = windkessel(46)
    terminals = {node: dict(wk) for node, _ in leaves}

    # ten observed segments spread from trunk to periphery: two on the
    # proximal trunk, a few mid-tree, the rest feeding terminal beds
    incoming = {s["to"]: s for s in segs}
    depth = {root: 0}
    for s in segs:
        depth[s["to"]] = depth[s["from"]] + 1
    leaf_nodes = [node for node, _ in leaves]
    leaf_parents = sorted({incoming[n]["id"] for n in leaf_nodes})
    mids = [s["id"] for s in segs
            if 2 <= depth[s["to"]] <= 4 and s["to"] not in leaf_nodes]
    candidates = [segs[0]["id"], segs[3]["id"]]  # proximal trunk
    candidates += mids[1:6]                      # mid-tree locations
    candidates += leaf_parents                   # terminal feeders
    observed = []
    for sid_ in candidates:
        if sid_ not in observed:
            observed.append(sid_)
        if len(observed) == 10:
            break
    assert len(observed) == 10

    finish(segs, terminals, observed, "data/full_arterial.net", "full")


if __name__ == "__main__":
    print("generating networks ...")
    make_desk7()
    make_full()
