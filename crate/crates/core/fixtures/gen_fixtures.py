#!/usr/bin/env python3
"""Regenerates the bundled fixture feeders and station registries.

Output is deterministic (fixed seeds). Run from this directory:

    python3 gen_fixtures.py
"""
import json
import math
import random

EARTH_M_PER_DEG = 111_195.0


def r6(x):
    return round(x, 6)


def feeder(name, n_buses, base_kv, seed, origin, spacing_m, r_per_km, x_per_km,
           load_kw, load_share, ampacities, tagged_every=0):
    rng = random.Random(seed)
    lat0, lon0 = origin
    buses = [{"id": "b000", "lat": lat0, "lon": lon0, "base_kv": base_kv}]
    lines = []
    loads = []
    for i in range(1, n_buses):
        # attach preferentially to recent buses so the tree has depth and branches
        lo = max(0, i - 6)
        parent = rng.randint(lo, i - 1)
        plat, plon = buses[parent]["lat"], buses[parent]["lon"]
        dist = spacing_m * rng.uniform(0.6, 1.4)
        bearing = rng.uniform(0, 2 * math.pi)
        dlat = dist * math.cos(bearing) / EARTH_M_PER_DEG
        dlon = dist * math.sin(bearing) / (EARTH_M_PER_DEG * math.cos(math.radians(plat)))
        bid = "b%03d" % i
        bus = {"id": bid, "lat": r6(plat + dlat), "lon": r6(plon + dlon), "base_kv": base_kv}
        if tagged_every and i % tagged_every == 0:
            bus["transformer"] = True
        buses.append(bus)
        km = dist / 1000.0
        lines.append({
            "id": "l%03d" % i,
            "from_bus": buses[parent]["id"],
            "to_bus": bid,
            "resistance_ohm": r6(r_per_km * km),
            "reactance_ohm": r6(x_per_km * km),
            "ampacity_a": float(rng.choice(ampacities)),
        })
        if rng.random() < load_share:
            kw = round(rng.uniform(*load_kw), 3)
            kvar = round(kw * math.tan(math.acos(rng.choice([0.9, 0.95, 0.98]))), 3)
            loads.append({"id": "ld_%s" % bid, "bus_id": bid, "kw": kw, "kvar": kvar})
    doc = {
        "buses": buses,
        "lines": lines,
        "loads": loads,
        "source": {"bus_id": "b000", "voltage_pu": 1.02},
    }
    with open(name, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    return doc


def stations(name, counts, seed, box):
    rng = random.Random(seed)
    (lat_lo, lat_hi), (lon_lo, lon_hi) = box
    ranges = [(3.0, 49.0), (50.0, 149.0), (150.0, 349.0), (350.0, 400.0)]
    rows = []
    k = 0
    for level, n in enumerate(counts):
        lo, hi = ranges[level]
        for _ in range(n):
            k += 1
            rated = round(rng.uniform(lo, hi), 1)
            rows.append((
                "s%04d" % k,
                "Station %d" % k,
                r6(rng.uniform(lat_lo, lat_hi)),
                r6(rng.uniform(lon_lo, lon_hi)),
                rated,
            ))
    rng.shuffle(rows)
    with open(name, "w") as f:
        f.write("id,name,lat,lon,rated_kw\n")
        for r in rows:
            f.write("%s,%s,%s,%s,%s\n" % r)


if __name__ == "__main__":
    sj = (37.335, -121.89)
    feeder("network_20.json", 20, 12.47, 20, sj, 250.0, 0.30, 0.45,
           (40.0, 250.0), 0.8, [200.0, 300.0, 400.0])
    feeder("network_40.json", 40, 69.0, 40, sj, 900.0, 0.12, 0.30,
           (400.0, 2000.0), 0.75, [400.0, 600.0, 800.0, 1200.0], tagged_every=4)
    feeder("network_200.json", 200, 12.47, 200, sj, 120.0, 0.20, 0.35,
           (5.0, 30.0), 0.75, [200.0, 300.0, 400.0, 600.0])
    box = ((37.30, 37.37), (-121.93, -121.85))
    stations("stations_951.csv", (895, 24, 18, 14), 951, box)
    stations("stations_small.csv", (6, 3, 2, 1), 12, box)
