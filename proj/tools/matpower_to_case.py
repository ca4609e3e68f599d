#!/usr/bin/env python3
"""Convert a MATPOWER case file (mpc.bus / mpc.branch / mpc.gen / mpc.gencost)
into the riskopf case JSON.

MATPOWER files carry no wind data, so wind farms come from a separate CSV with
columns bus,price,forecast_mw[,capacity_mw]. Generator limits and costs are
taken from mpc.gen and a polynomial mpc.gencost (model 2, at most quadratic);
constant cost terms are dropped. Out-of-service branches and generators are
skipped. Branch rateA = 0 means unlimited.

Usage:
  matpower_to_case.py case30.m --wind wind.csv --out ieee30.json
"""

import argparse
import csv
import json
import re
import sys


def read_matrix(text, name):
    m = re.search(r"mpc\." + name + r"\s*=\s*\[(.*?)\]\s*;", text, re.S)
    if m is None:
        return None
    rows = []
    for line in m.group(1).splitlines():
        line = line.split("%", 1)[0].strip().rstrip(";").strip()
        if not line:
            continue
        for chunk in line.split(";"):
            values = chunk.replace(",", " ").split()
            if values:
                rows.append([float(v) for v in values])
    return rows


def read_scalar(text, name, default):
    m = re.search(r"mpc\." + name + r"\s*=\s*([-+0-9.eE]+)\s*;", text)
    return float(m.group(1)) if m else default


def number(v):
    return int(v) if float(v).is_integer() else v


def convert(text, wind_rows):
    bus = read_matrix(text, "bus")
    branch = read_matrix(text, "branch")
    gen = read_matrix(text, "gen")
    gencost = read_matrix(text, "gencost")
    if bus is None or branch is None or gen is None:
        raise ValueError("mpc.bus, mpc.branch and mpc.gen are required")

    refs = [int(r[0]) for r in bus if int(r[1]) == 3]
    if len(refs) != 1:
        raise ValueError(f"expected exactly one reference (type 3) bus, found {len(refs)}")

    doc = {
        "schema_version": 1,
        "base_mva": read_scalar(text, "baseMVA", 100.0),
        "reference_bus": refs[0],
        "buses": [{"id": int(r[0]), "load_mw": number(r[2])} for r in bus],
        "lines": [],
        "generators": [],
        "wind_farms": [],
    }
    for r in branch:
        if len(r) > 10 and r[10] == 0:
            continue
        doc["lines"].append(
            {"from": int(r[0]), "to": int(r[1]), "x_pu": r[3], "limit_mw": None if r[5] == 0 else number(r[5])}
        )

    seen = set()
    for i, r in enumerate(gen):
        if len(r) > 7 and r[7] <= 0:
            continue
        b = int(r[0])
        if b in seen:
            raise ValueError(f"bus {b} has more than one generator; merge them before converting")
        seen.add(b)
        c_quad, d_lin = 0.0, 0.0
        if gencost is not None and i < len(gencost):
            cost = gencost[i]
            if int(cost[0]) != 2:
                raise ValueError(f"generator {i + 1}: only polynomial (model 2) costs are supported")
            n = int(cost[3])
            coeffs = cost[4 : 4 + n]
            if n > 3:
                raise ValueError(f"generator {i + 1}: cost polynomial above quadratic")
            coeffs = [0.0] * (3 - n) + coeffs
            c_quad, d_lin = coeffs[0], coeffs[1]
        doc["generators"].append(
            {"bus": b, "pmin_mw": number(r[9]), "pmax_mw": number(r[8]), "c_quad": c_quad, "d_lin": d_lin}
        )

    for row in wind_rows:
        farm = {"bus": int(row["bus"]), "price": float(row["price"]), "forecast_mw": float(row["forecast_mw"])}
        if row.get("capacity_mw"):
            farm["capacity_mw"] = float(row["capacity_mw"])
        doc["wind_farms"].append(farm)
    return doc


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    p.add_argument("matpower", help="MATPOWER .m case file")
    p.add_argument("--wind", help="wind farm CSV: bus,price,forecast_mw[,capacity_mw]")
    p.add_argument("--description", help="free-text description stored in the case")
    p.add_argument("--out", help="output JSON (default: stdout)")
    args = p.parse_args(argv)

    with open(args.matpower) as f:
        text = f.read()
    wind_rows = []
    if args.wind:
        with open(args.wind, newline="") as f:
            wind_rows = list(csv.DictReader(f))
    try:
        doc = convert(text, wind_rows)
    except ValueError as e:
        print(f"matpower_to_case: {e}", file=sys.stderr)
        return 1
    if args.description:
        doc = {"schema_version": doc.pop("schema_version"), "description": args.description, **doc}

    out = json.dumps(doc, indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(out)
    else:
        sys.stdout.write(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
