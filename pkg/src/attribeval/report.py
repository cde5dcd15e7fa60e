"""Consolidated diagnostic report: JSON document, per-property CSVs, and
normalized radar data.

Every artifact embeds the config hash and master seed so equal-hash runs are
byte-identical.  CSV files carry the provenance in a leading comment line to
keep the documented column sets intact.
"""

import csv
import json
import math
from importlib import resources

from .agreement import AgreementReport
from .complexity import ComplexityReport
from .core import Kind
from .errors import ValidationError
from .faithfulness import FaithfulnessReport
from .simulatability import SimulatabilityReport

SCHEMA_VERSION = 1

RANGE_TOL = 1e-9


def faithfulness_block(rep: FaithfulnessReport, kinds: dict[str, Kind]) -> dict:
    def scores(s, kind: Kind | None) -> dict:
        out = {
            "comp": s.comp,
            "suff": s.suff,
            "suff_inverted": s.suff_inverted,
            "n_instances": s.n_instances,
        }
        if kind is not None:
            out["kind"] = kind.value
        return out

    return {
        "k_max": rep.k_max,
        "random_sizes": list(rep.random_sizes),
        "skipped": sorted(rep.skipped),
        "methods": {
            name: scores(s, kinds.get(name)) for name, s in sorted(rep.per_method.items())
        },
        "random": scores(rep.random, None),
    }


def agreement_block(reports: list[AgreementReport]) -> dict:
    rows = []
    for rep in reports:
        for row in rep.rows:
            rows.append({
                "method": row.method,
                "kind": row.kind.value,
                "level": row.level,
                "matcher": row.matcher,
                "map": row.map,
                "baseline": row.baseline,
                "n_instances": row.n_instances,
            })
    rows.sort(key=lambda r: (r["level"], r["method"]))
    return {"rows": rows}


def simulatability_block(rep: SimulatabilityReport) -> dict:
    return {
        "sf_baseline": rep.sf_baseline,
        "skipped": sorted(rep.skipped),
        "rows": [
            {
                "method": row.method,
                "kind": row.kind.value,
                "insertion": row.insertion,
                "sf": row.sf,
                "sf_baseline": row.sf_baseline,
                "rsf": row.rsf,
                "k": row.k,
            }
            for row in sorted(rep.rows, key=lambda r: r.method)
        ],
    }


def complexity_block(rep: ComplexityReport) -> dict:
    return {
        "skipped": sorted(rep.skipped),
        "rows": [
            {
                "method": row.method,
                "kind": row.kind.value,
                "cl": row.cl,
                "random_ref": row.random_ref,
                "upper_bound": row.upper_bound,
                "n_instances": row.n_instances,
            }
            for row in sorted(rep.rows, key=lambda r: r.method)
        ],
    }


def build_report(dataset_id: str, model_id: str, config_hash: str, seed: int,
                 properties: dict, k_faith: int = 3, k_sim: int = 1) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "dataset_id": dataset_id,
        "model_id": model_id,
        "config_hash": config_hash,
        "seed": seed,
        "budgets": {"k_faith": k_faith, "k_sim": k_sim},
        "properties": properties,
    }


def load_schema() -> dict:
    with resources.files("attribeval").joinpath("report_schema.json").open() as fh:
        return json.load(fh)


def validate_report(report: dict) -> None:
    """Structural validation plus the documented score-range invariants."""
    try:
        import jsonschema
    except ImportError:
        jsonschema = None
    if jsonschema is not None:
        jsonschema.validate(report, load_schema())
    props = report.get("properties", {})
    faith = props.get("faithfulness")
    if faith:
        for name, s in list(faith["methods"].items()) + [("random", faith["random"])]:
            for key in ("comp", "suff"):
                if not -RANGE_TOL <= s[key] <= 1 + RANGE_TOL:
                    raise ValidationError(f"faithfulness {key} for {name!r} outside [0, 1]")
    for row in props.get("agreement", {}).get("rows", []):
        if not -RANGE_TOL <= row["map"] <= 1 + RANGE_TOL:
            raise ValidationError(f"MAP for {row['method']!r} outside [0, 1]")
    for row in props.get("simulatability", {}).get("rows", []):
        if not -1 - RANGE_TOL <= row["rsf"] <= 1 + RANGE_TOL:
            raise ValidationError(f"RSF for {row['method']!r} outside [-1, 1]")
    for row in props.get("complexity", {}).get("rows", []):
        if not -RANGE_TOL <= row["cl"] <= row["upper_bound"] + RANGE_TOL:
            raise ValidationError(
                f"complexity for {row['method']!r} outside [0, ln budget]"
            )


def save_report(report: dict, path) -> None:
    validate_report(report)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _provenance_line(report: dict) -> str:
    return f"# config_hash={report['config_hash']} seed={report['seed']}"


def _write_csv(path, report: dict, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_provenance_line(report) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_csvs(report: dict, out_dir) -> list[str]:
    """One CSV per evaluated property, using the documented column sets."""
    import os

    written = []
    props = report["properties"]
    seed = report["seed"]
    if "faithfulness" in props:
        block = props["faithfulness"]
        rows = []
        items = list(block["methods"].items()) + [("random", block["random"])]
        for name, s in items:
            kind = s.get("kind", "")
            for prop, score in (("comprehensiveness", s["comp"]), ("sufficiency", s["suff"])):
                baseline = block["random"]["comp" if prop == "comprehensiveness" else "suff"]
                rows.append([name, kind, prop, block["k_max"], score, baseline,
                             s["n_instances"], seed])
        path = os.path.join(out_dir, "faithfulness.csv")
        _write_csv(path, report,
                   ["method", "kind", "property", "k_max", "score", "baseline",
                    "n_instances", "seed"], rows)
        written.append(path)
    if "agreement" in props:
        rows = [[r["method"], r["kind"], r["level"], r["matcher"], r["map"],
                 r["baseline"], r["n_instances"]]
                for r in props["agreement"]["rows"]]
        path = os.path.join(out_dir, "agreement.csv")
        _write_csv(path, report,
                   ["method", "kind", "level", "matcher", "MAP", "baseline", "n_instances"],
                   rows)
        written.append(path)
    if "simulatability" in props:
        rows = [[r["method"], r["kind"], r["insertion"], r["sf"], r["sf_baseline"],
                 r["rsf"], r["k"], seed]
                for r in props["simulatability"]["rows"]]
        path = os.path.join(out_dir, "simulatability.csv")
        _write_csv(path, report,
                   ["method", "kind", "insertion", "SF", "SF_O", "RSF", "k", "seed"], rows)
        written.append(path)
    if "complexity" in props:
        rows = [[r["method"], r["kind"], r["cl"], r["random_ref"], r["upper_bound"],
                 r["n_instances"], seed]
                for r in props["complexity"]["rows"]]
        path = os.path.join(out_dir, "complexity.csv")
        _write_csv(path, report,
                   ["method", "kind", "CL", "random_ref", "upper_bound",
                    "n_instances", "seed"], rows)
        written.append(path)
    return written


def radar_rows(report: dict) -> list[tuple[str, str, float]]:
    """Per-method scores normalized to [0, 1] per property axis, higher = better.

    Axes: comprehensiveness, sufficiency, token-level agreement, simulatability
    (RSF), and inverted complexity.  Degenerate axes (all methods equal) pin to
    0.5 so the radar stays drawable.
    """
    props = report["properties"]
    axes: dict[str, dict[str, float]] = {}
    if "faithfulness" in props:
        methods = props["faithfulness"]["methods"]
        axes["comprehensiveness"] = {m: s["comp"] for m, s in methods.items()}
        axes["sufficiency"] = {m: s["suff"] for m, s in methods.items()}
    if "agreement" in props:
        token_rows = [r for r in props["agreement"]["rows"] if r["level"] == "token"]
        if token_rows:
            axes["agreement"] = {r["method"]: r["map"] for r in token_rows}
    if "simulatability" in props:
        axes["simulatability"] = {
            r["method"]: r["rsf"] for r in props["simulatability"]["rows"]
        }
    if "complexity" in props:
        axes["complexity"] = {
            r["method"]: -r["cl"] for r in props["complexity"]["rows"]
        }
    out = []
    for axis in sorted(axes):
        scores = axes[axis]
        lo, hi = min(scores.values()), max(scores.values())
        for method in sorted(scores):
            if math.isclose(lo, hi):
                norm = 0.5
            else:
                norm = (scores[method] - lo) / (hi - lo)
            out.append((axis, method, norm))
    return out


def write_radar(report: dict, path) -> None:
    _write_csv(path, report, ["property", "method", "normalized_score"],
               [[a, m, v] for a, m, v in radar_rows(report)])
