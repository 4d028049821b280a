"""Smoke test for the gridclear_py extension module."""
import math
import pathlib
import tempfile

import gridclear_py as gc

ROOT = pathlib.Path(__file__).resolve().parent.parent
DATA = ROOT / "crates" / "core" / "data"

net = gc.Network.load(str(DATA / "ieee123.json"))
assert net.n == 123, net.n
p, q = net.fixed_load()
print(f"feeder: {net!r}, fixed load {p:.1f} kW / {q:.1f} kVAr")

assert abs(gc.reactive_ratio(0.9) - math.tan(math.acos(0.9))) < 1e-12
assert len(gc.polygon_coefficients(12)) == 12

bid = gc.Der("b1", 1, "a", "bid", 20.0, 40.0)
offer = gc.Der("o1", 1, "a", "offer", 5.0, 40.0)
assert bid.volume_kw < 0 < offer.volume_kw
assert gc.gamma_price(bid) == 20.0

ders = gc.generate_ders(net, bids=40, offers=20, seed=7)
assert len(ders) == 60

sol = gc.solve(net, ders)
assert sol["status"] == "optimal", sol
assert sol["kkt_residual"] < 1e-8
assert all(-1e-9 <= a <= 1 + 1e-9 for a in sol["alpha"].values())
print(f"solve: objective {sol['objective']:.3f}, kkt {sol['kkt_residual']:.1e}")

res = gc.run_case(net, ders, case="c", lmp=13.0)
print(f"case c: {len(res['cleared_bids'])} bids, {len(res['cleared_offers'])} offers, "
      f"{len(res['cleared_mc'])} mc cleared")
assert "retail" in res

with tempfile.TemporaryDirectory() as tmp:
    summary = gc.run_scenario(str(DATA / "reference.toml"), output_dir=tmp)
    assert summary["files"], summary
    print(f"scenario: {summary['cleared_bids']} bids, {summary['cleared_offers']} offers")

try:
    gc.Network.load("/nonexistent.json")
except OSError:
    pass
else:
    raise AssertionError("expected OSError")

print("smoke test ok")
