"""Recompute aggregate columns of a report CSV from its run rows.

Deliberately standalone: stdlib only, nothing imported from the harness, so
it checks the harness aggregation instead of repeating it.

    python -m smlab.recompute report.csv [--tol 1e-9]
"""
import argparse
import csv
import math
import statistics
import sys


def _f(s):
    return None if s == "" else float(s)


def _stats(xs):
    if not xs:
        return None, None
    return statistics.fmean(xs), statistics.pstdev(xs)


def recompute(run_rows):
    ok = [r for r in run_rows if r["status"] == "ok" and r["stable"] != ""]
    unstable = [r for r in ok if r["stable"] == "false"]
    out = {
        "n_runs": float(len(run_rows)),
        "n_ok": float(len(ok)),
        "n_failed": float(len(run_rows) - len(ok)),
        "n_unstable": float(len(unstable)),
        "stability_pct": None if not ok else 100.0 * (len(ok) - len(unstable)) / len(ok),
    }
    for col in ("doi", "roi", "md"):
        out[col + "_mean"], out[col + "_std"] = _stats([float(r[col]) for r in unstable])
    out["regret_mean"], out["regret_std"] = _stats([float(r["regret"]) for r in ok if r["regret"] != ""])
    for col in ("egalitarian", "set_equality"):
        out[col + "_mean"], out[col + "_std"] = _stats([float(r[col]) for r in ok])
    msm = [r["is_msm"] == "true" for r in ok if r["is_msm"] != ""]
    out["msm_pct"] = None if not msm else 100.0 * sum(msm) / len(msm)
    out["mm_pct"] = None if not ok else 100.0 * statistics.fmean(float(r["mm_fraction"]) for r in ok)
    return out


def compare(path, tol=1e-9):
    """Return a list of (column, reported, recomputed) mismatches."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    runs = [r for r in rows if r["row_type"] == "run"]
    aggs = [r for r in rows if r["row_type"] == "aggregate"]
    if len(aggs) != 1:
        raise ValueError(f"expected exactly one aggregate row, found {len(aggs)}")
    agg = aggs[0]
    mismatches = []
    for col, value in recompute(runs).items():
        reported = _f(agg[col])
        if value is None or reported is None:
            if value is not reported:
                mismatches.append((col, reported, value))
        elif not math.isclose(reported, value, rel_tol=0.0, abs_tol=tol):
            mismatches.append((col, reported, value))
    return mismatches


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv")
    ap.add_argument("--tol", type=float, default=1e-9)
    args = ap.parse_args(argv)
    bad = compare(args.csv, args.tol)
    for col, rep, val in bad:
        print(f"MISMATCH {col}: reported={rep} recomputed={val}")
    print("OK" if not bad else f"{len(bad)} mismatching column(s)")
    return 0 if not bad else 1


if __name__ == "__main__":
    sys.exit(main())
