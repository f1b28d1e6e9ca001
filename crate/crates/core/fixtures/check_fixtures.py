#!/usr/bin/env python3
"""Independent sanity check of the bundled fixtures: element counts,
radiality by breadth-first search, catalog ordering and station census."""
import csv
import json
import sys
from collections import deque


def check_network(path, n_buses):
    doc = json.load(open(path))
    ids = [b["id"] for b in doc["buses"]]
    assert len(ids) == n_buses, (path, len(ids))
    assert len(set(ids)) == len(ids)
    assert len(doc["lines"]) == n_buses - 1
    adj = {i: [] for i in ids}
    for ln in doc["lines"]:
        adj[ln["from_bus"]].append(ln["to_bus"])
        adj[ln["to_bus"]].append(ln["from_bus"])
    seen = {doc["source"]["bus_id"]}
    q = deque(seen)
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                q.append(v)
    assert len(seen) == n_buses, "not connected"
    catalog = sorted(ids, key=lambda s: s.encode())
    print("%s: buses=%d lines=%d loads=%d radial=true first=%s last=%s"
          % (path, len(ids), len(doc["lines"]), len(doc["loads"]), catalog[0], catalog[-1]))


def check_stations(path, census):
    counts = [0, 0, 0, 0]
    with open(path) as f:
        for row in csv.DictReader(f):
            kw = float(row["rated_kw"])
            level = 0 if kw < 50 else 1 if kw < 150 else 2 if kw < 350 else 3
            counts[level] += 1
    assert tuple(counts) == census, (path, counts)
    print("%s: census=%s" % (path, counts))


if __name__ == "__main__":
    check_network("network_20.json", 20)
    check_network("network_40.json", 40)
    check_network("network_200.json", 200)
    check_stations("stations_951.csv", (895, 24, 18, 14))
    check_stations("stations_small.csv", (6, 3, 2, 1))
    sys.exit(0)
