"""Writes ieee123.json (gridclear-feeder/1) from the standard IEEE 123-node feeder tables.

Loads are halved and modeled as constant power on the listed phase (delta loads on their
first phase). Closed switches, regulators and the transformer become zero-impedance lines;
open switches are dropped. The substation bus 150 is relabeled 0.
"""
import json
import sys
from pathlib import Path

# from, to, length ft, configuration
SEGMENTS = """
1 2 175 10
1 3 250 11
1 7 300 1
3 4 200 11
3 5 325 11
5 6 250 11
7 8 200 1
8 12 225 10
8 9 225 9
8 13 300 1
9 14 425 9
13 34 150 11
13 18 825 2
14 11 250 9
14 10 250 9
15 16 375 11
15 17 350 11
18 19 250 9
18 21 300 2
19 20 325 9
21 22 525 10
21 23 250 2
23 24 550 11
23 25 275 2
25 26 350 7
25 28 200 2
26 27 275 7
26 31 225 11
27 33 500 9
28 29 300 2
29 30 350 2
30 250 200 2
31 32 300 11
34 15 100 11
35 36 650 8
35 40 250 1
36 37 300 9
36 38 250 10
38 39 325 10
40 41 325 11
40 42 250 1
42 43 500 10
42 44 200 1
44 45 200 9
44 47 250 1
45 46 300 9
47 48 150 4
47 49 250 4
49 50 250 4
50 51 250 4
52 53 200 1
53 54 125 1
54 55 275 1
54 57 350 3
55 56 275 1
57 58 250 10
57 60 750 3
58 59 250 10
60 61 550 5
60 62 250 12
62 63 175 12
63 64 350 12
64 65 425 12
65 66 325 12
67 68 200 9
67 72 275 3
67 97 250 3
68 69 275 9
69 70 325 9
70 71 275 9
72 73 275 11
72 76 200 3
73 74 350 11
74 75 400 11
76 77 400 6
76 86 700 3
77 78 100 6
78 79 225 6
78 80 475 6
80 81 475 6
81 82 250 6
81 84 675 11
82 83 250 6
84 85 475 11
86 87 450 6
87 88 175 9
87 89 275 6
89 90 225 10
89 91 225 6
91 92 300 11
91 93 225 6
93 94 275 9
93 95 300 6
95 96 200 10
97 98 275 3
98 99 550 3
99 100 300 3
100 450 800 3
101 102 225 11
101 105 275 3
102 103 325 11
103 104 700 11
105 106 225 10
105 108 325 3
106 107 575 10
108 109 450 9
108 300 1000 3
109 110 300 9
110 111 575 9
110 112 125 9
112 113 525 9
113 114 325 9
135 35 375 4
149 1 400 1
152 52 400 1
160 67 350 6
197 101 250 3
"""

# closed switches, the substation regulator and the transformer
ZERO_IMPEDANCE = [(150, 149), (13, 152), (18, 135), (60, 160), (97, 197), (61, 610)]

# node, kW/kVAr on phases a, b, c
LOADS = """
1 40 20 0 0 0 0
2 0 0 20 10 0 0
4 0 0 0 0 40 20
5 0 0 0 0 20 10
6 0 0 0 0 40 20
7 20 10 0 0 0 0
9 40 20 0 0 0 0
10 20 10 0 0 0 0
11 40 20 0 0 0 0
12 0 0 20 10 0 0
16 0 0 0 0 40 20
17 0 0 0 0 20 10
19 40 20 0 0 0 0
20 40 20 0 0 0 0
22 0 0 40 20 0 0
24 0 0 0 0 40 20
28 40 20 0 0 0 0
29 40 20 0 0 0 0
30 0 0 0 0 40 20
31 0 0 0 0 20 10
32 0 0 0 0 20 10
33 40 20 0 0 0 0
34 0 0 0 0 40 20
35 40 20 0 0 0 0
37 40 20 0 0 0 0
38 0 0 20 10 0 0
39 0 0 20 10 0 0
41 0 0 0 0 20 10
42 20 10 0 0 0 0
43 0 0 40 20 0 0
45 20 10 0 0 0 0
46 20 10 0 0 0 0
47 35 25 35 25 35 25
48 70 50 70 50 70 50
49 35 25 70 50 35 20
50 0 0 0 0 40 20
51 20 10 0 0 0 0
52 40 20 0 0 0 0
53 40 20 0 0 0 0
55 20 10 0 0 0 0
56 0 0 20 10 0 0
58 0 0 20 10 0 0
59 0 0 20 10 0 0
60 20 10 0 0 0 0
62 0 0 0 0 40 20
63 40 20 0 0 0 0
64 0 0 75 35 0 0
65 35 25 35 25 70 50
66 0 0 0 0 75 35
68 20 10 0 0 0 0
69 40 20 0 0 0 0
70 20 10 0 0 0 0
71 40 20 0 0 0 0
73 0 0 0 0 40 20
74 0 0 0 0 40 20
75 0 0 0 0 40 20
76 105 80 70 50 70 50
77 0 0 40 20 0 0
79 40 20 0 0 0 0
80 0 0 40 20 0 0
82 40 20 0 0 0 0
83 0 0 0 0 20 10
84 0 0 0 0 20 10
85 0 0 0 0 40 20
86 0 0 20 10 0 0
87 0 0 40 20 0 0
88 40 20 0 0 0 0
90 0 0 40 20 0 0
92 0 0 0 0 40 20
94 40 20 0 0 0 0
95 0 0 20 10 0 0
96 0 0 20 10 0 0
98 40 20 0 0 0 0
99 0 0 40 20 0 0
100 0 0 0 0 40 20
102 0 0 0 0 20 10
103 0 0 0 0 40 20
104 0 0 0 0 40 20
106 0 0 40 20 0 0
107 0 0 40 20 0 0
109 40 20 0 0 0 0
111 20 10 0 0 0 0
112 20 10 0 0 0 0
113 40 20 0 0 0 0
114 20 10 0 0 0 0
"""

# ohm/mile, conductor positions 1..3 of spacing 500
R1 = [[0.4576, 0.1560, 0.1535], [0.1560, 0.4666, 0.1580], [0.1535, 0.1580, 0.4615]]
X1 = [[1.0780, 0.5017, 0.3849], [0.5017, 1.0482, 0.4236], [0.3849, 0.4236, 1.0651]]
R12 = [[1.5209, 0.5198, 0.4924], [0.5198, 1.5329, 0.5198], [0.4924, 0.5198, 1.5209]]
X12 = [[0.7521, 0.0104, -0.0498], [0.0104, 0.7341, 0.0104], [-0.0498, 0.0104, 0.7521]]

# phase at each conductor position for the three-phase overhead configurations
POSITIONS = {1: "abc", 2: "cab", 3: "bca", 4: "cba", 5: "bac", 6: "acb"}
AMPACITY = {**{c: 530.0 for c in range(1, 9)}, 9: 230.0, 10: 230.0, 11: 230.0, 12: 310.0}
SWITCH_AMPACITY = 530.0
PHASE = {"a": 0, "b": 1, "c": 2}


def zero():
    return [[0.0] * 3 for _ in range(3)]


def config(cfg):
    """Returns (phases, R, X) in ohm/mile, phase-ordered."""
    r, x = zero(), zero()
    if cfg in POSITIONS:
        order = [PHASE[p] for p in POSITIONS[cfg]]
        for i in range(3):
            for j in range(3):
                r[order[i]][order[j]] = R1[i][j]
                x[order[i]][order[j]] = X1[i][j]
        return "abc", r, x
    if cfg in (7, 8):
        phases = "ac" if cfg == 7 else "ab"
        other = PHASE[phases[1]]
        # two-wire spacing 505: self terms of positions 1 and 3, mutual term between them
        for (pi, src), (pj, srcj) in [((0, 0), (0, 0)), ((0, 0), (other, 2)), ((other, 2), (0, 0)), ((other, 2), (other, 2))]:
            r[pi][pj] = R1[src][srcj]
            x[pi][pj] = X1[src][srcj]
        return phases, r, x
    if cfg in (9, 10, 11):
        k = cfg - 9
        r[k][k], x[k][k] = 1.3292, 1.3475
        return "abc"[k], r, x
    if cfg == 12:
        return "abc", [row[:] for row in R12], [row[:] for row in X12]
    raise ValueError(cfg)


def label(node):
    return 0 if node == 150 else node


def main(out):
    lines = []
    phases_of = {0: "abc"}
    children = {}
    for text in SEGMENTS.strip().splitlines():
        a, b, ft, cfg = map(int, text.split())
        ph, r, x = config(cfg)
        miles = ft / 5280.0
        lines.append({
            "from": label(a), "to": label(b), "phases": ph,
            "r_ohm": [[v * miles for v in row] for row in r],
            "x_ohm": [[v * miles for v in row] for row in x],
            "ampacity_a": [AMPACITY[cfg] if p in ph else 0.0 for p in "abc"],
        })
    for a, b in ZERO_IMPEDANCE:
        lines.append({
            "from": label(a), "to": label(b), "phases": "abc",
            "r_ohm": zero(), "x_ohm": zero(),
            "ampacity_a": [SWITCH_AMPACITY] * 3,
        })
    for l in lines:
        children.setdefault(l["from"], []).append(l)
    # a bus carries the phases of the line feeding it
    stack = [0]
    while stack:
        bus = stack.pop()
        for l in children.get(bus, []):
            phases_of[l["to"]] = l["phases"]
            stack.append(l["to"])

    loads = {}
    for text in LOADS.strip().splitlines():
        vals = list(map(float, text.split()))
        node = int(vals[0])
        loads[node] = ([-vals[1] / 2, -vals[3] / 2, -vals[5] / 2], [-vals[2] / 2, -vals[4] / 2, -vals[6] / 2])
    buses = []
    for bus in sorted(phases_of):
        p, q = loads.get(bus, ([0.0] * 3, [0.0] * 3))
        for k in range(3):
            if "abc"[k] not in phases_of[bus] and (p[k] or q[k]):
                raise SystemExit(f"load on absent phase at bus {bus}")
        buses.append({"index": bus, "phases": phases_of[bus],
                      "fixed_p_kw": [v + 0.0 for v in p], "fixed_q_kvar": [v + 0.0 for v in q]})
    assert len(buses) == len(lines) + 1, (len(buses), len(lines))
    doc = {
        "schema": "gridclear-feeder/1",
        "name": "IEEE 123-bus, half load",
        "header": {"s_base_kva": 1000.0, "v_base_kv": 2.401, "v0_pu": 1.03,
                   "v_min_pu": 0.95, "v_max_pu": 1.05, "s0_max_kva": 5000.0},
        "buses": buses,
        "lines": lines,
    }
    Path(out).write_text(json.dumps(doc, indent=1) + "\n")
    tp = -sum(sum(b["fixed_p_kw"]) for b in buses)
    tq = -sum(sum(b["fixed_q_kvar"]) for b in buses)
    print(f"{len(buses)} buses, {len(lines)} lines, load {tp} kW {tq} kVAr")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else Path(__file__).with_name("ieee123.json"))
