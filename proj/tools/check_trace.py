#!/usr/bin/env python3
"""Offline checks on a hatpicctl CSV trace.

Every row must satisfy tau_fb_total == clamp(tau_fb_rec + tau_fb_ext, +-tau_max)
and |tau_fb_total| <= tau_max; t must be strictly increasing and f_contact >= 0.
Exit 0 when all rows pass, 1 on a violation, 2 on unreadable input.
"""

import argparse
import csv
import math
import sys

REQUIRED = ("t", "tau_fb_rec", "tau_fb_ext", "tau_fb_total", "f_contact")


def check(lines, tau_max):
    rows = csv.DictReader(line for line in lines if line.strip() and not line.startswith("#"))
    missing = [c for c in REQUIRED if c not in (rows.fieldnames or [])]
    if missing:
        raise ValueError("missing columns: " + ", ".join(missing))
    errors = []
    count = 0
    last_t = -math.inf
    for n, row in enumerate(rows, start=1):
        count += 1
        t = float(row["t"])
        rec, ext, total = (float(row[k]) for k in ("tau_fb_rec", "tau_fb_ext", "tau_fb_total"))
        if not t > last_t:
            errors.append(f"row {n}: t={t!r} does not increase")
        last_t = t
        if abs(total) > tau_max:
            errors.append(f"row {n}: |tau_fb_total|={abs(total)!r} > {tau_max}")
        if total != min(max(rec + ext, -tau_max), tau_max):
            errors.append(f"row {n}: tau_fb_total={total!r} != clamp({rec!r} + {ext!r})")
        if float(row["f_contact"]) < 0.0:
            errors.append(f"row {n}: negative f_contact")
    return count, errors


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("traces", nargs="+")
    ap.add_argument("--tau-max", type=float, default=0.44)
    args = ap.parse_args(argv)
    status = 0
    for path in args.traces:
        try:
            with open(path, newline="") as f:
                count, errors = check(f, args.tau_max)
        except (OSError, ValueError) as e:
            print(f"{path}: {e}", file=sys.stderr)
            return 2
        for e in errors[:20]:
            print(f"{path}: {e}")
        print(f"{path}: {count} rows, {len(errors)} violations")
        if errors or count == 0:
            status = 1
    return status


if __name__ == "__main__":
    sys.exit(main())
