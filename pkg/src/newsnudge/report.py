"""Rendering of run outputs into delimited tables, a JSON bundle, and figures.

All figures are rendered with the Agg backend straight to PNG files so report
generation is headless and byte-deterministic for a fixed input run.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .assignment import ARMS, anova_balance
from .metrics import PCT_OUTCOMES, load_snapshots
from .simulator import OUTCOMES

OUTCOME_LABELS = {
    "news_follows": "Following",
    "news_like_pct": "News likes (%)",
    "news_rt_pct": "News tweets (%)",
    "pol_like_pct": "Political likes (%)",
    "pol_rt_pct": "Political tweets (%)",
}

ARM_LABELS = {"control": "Control", "male_bot": "Male bot", "female_bot": "Female bot"}
PAIR_LABELS = {"female": "Female", "male": "Male", "combined": "Combined"}


def _read_assignment(out: Path) -> dict[str, str]:
    with (out / "assignment.csv").open(newline="", encoding="utf-8") as fh:
        return {row["user_id"]: row["arm"] for row in csv.DictReader(fh)}


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="\n", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value, digits=4) -> str:
    return "" if value is None else f"{value:.{digits}f}"


def prepost_table(out: Path) -> tuple[list[str], list[list]]:
    """Group means of each outcome, pre and post, by arm."""
    arms = _read_assignment(out)
    waves = {
        "pre": load_snapshots(out / "snapshots_pre.csv"),
        "post": load_snapshots(out / "snapshots_post.csv"),
    }
    rows = []
    for outcome in OUTCOMES:
        for wave, snapshots in waves.items():
            row = [OUTCOME_LABELS[outcome], wave]
            for arm in ARMS:
                values = [
                    getattr(s, outcome)
                    for s in snapshots
                    if arms[s.user_id] == arm and getattr(s, outcome) is not None
                ]
                row.append(_fmt(float(np.mean(values)) if values else None))
            rows.append(row)
    return ["outcome", "wave"] + [ARM_LABELS[a] for a in ARMS], rows


def activity_balance_table(out: Path) -> tuple[list[str], list[list]]:
    """Pre-wave outcome means per arm with a one-way ANOVA p-value row."""
    arms = _read_assignment(out)
    snapshots = load_snapshots(out / "snapshots_pre.csv")
    header = ["treatment"] + [OUTCOME_LABELS[o] for o in OUTCOMES]
    by_outcome = {}
    for outcome in OUTCOMES:
        groups = {
            arm: [
                getattr(s, outcome)
                for s in snapshots
                if arms[s.user_id] == arm and getattr(s, outcome) is not None
            ]
            for arm in ARMS
        }
        by_outcome[outcome] = anova_balance(groups, metric_name=outcome)
    rows = [
        [ARM_LABELS[arm]] + [_fmt(by_outcome[o].group_means[arm]) for o in OUTCOMES]
        for arm in ARMS
    ]
    rows.append(["ANOVA"] + [_fmt(by_outcome[o].p_value) for o in OUTCOMES])
    return header, rows


def _coef_cell(est: dict) -> str:
    if not est.get("available", True):
        return "n/a"
    return f"{est['coef']:.4f} ({est['se']:.4f})"


def effects_tables(effects: dict) -> dict[str, tuple[list[str], list[list]]]:
    tables = {}
    estimands = sorted({e["estimand"] for e in effects["primary"]})
    for estimand in estimands:
        rows = []
        for pair in ("female", "male", "combined"):
            row = [PAIR_LABELS[pair]]
            for outcome in OUTCOMES:
                match = [
                    e
                    for e in effects["primary"]
                    if e["estimand"] == estimand and e["pair"] == pair and e["outcome"] == outcome
                ]
                row.append(_coef_cell(match[0]) if match else "")
            rows.append(row)
        tables[estimand] = (
            ["pair"] + [OUTCOME_LABELS[o] for o in OUTCOMES],
            rows,
        )
    return tables


def exclusion_variant_table(effects: dict) -> tuple[list[str], list[list]]:
    """The following-count effect under each follow-exclusion cap."""
    caps = []
    for entry in effects["exclusion_variants"]:
        if entry["cap"] not in caps:
            caps.append(entry["cap"])
    header = ["estimand", "pair"] + [f"Following (cap {c})" for c in caps]
    keys = []
    for entry in effects["exclusion_variants"]:
        key = (entry["estimand"], entry["pair"])
        if key not in keys:
            keys.append(key)
    rows = []
    for estimand, pair in keys:
        row = [estimand, PAIR_LABELS.get(pair, pair)]
        for cap in caps:
            match = [
                e
                for e in effects["exclusion_variants"]
                if e["cap"] == cap and e["estimand"] == estimand and e["pair"] == pair
            ]
            row.append(_coef_cell(match[0]) if match else "")
        rows.append(row)
    return header, rows


def subgroup_tables(effects: dict) -> dict[str, tuple[list[str], list[list]]]:
    tables = {}
    for split, by_label in effects.get("subgroups", {}).items():
        header = ["subgroup", "estimand", "pair"] + [OUTCOME_LABELS[o] for o in OUTCOMES]
        rows = []
        for label in sorted(by_label):
            ests = by_label[label]
            combos = []
            for e in ests:
                key = (e["estimand"], e["pair"])
                if key not in combos:
                    combos.append(key)
            for estimand, pair in combos:
                row = [label, estimand, PAIR_LABELS.get(pair, pair)]
                for outcome in OUTCOMES:
                    match = [
                        e
                        for e in ests
                        if e["estimand"] == estimand and e["pair"] == pair and e["outcome"] == outcome
                    ]
                    row.append(_coef_cell(match[0]) if match else "")
                rows.append(row)
        tables[split] = (header, rows)
    return tables


# --- figures ----------------------------------------------------------------


def _save(fig, path: Path) -> None:
    fig.savefig(path, dpi=120, format="png")
    plt.close(fig)


def forest_figure(effects: dict, estimand: str, path: Path) -> None:
    entries = [
        e
        for e in effects["primary"]
        if e["estimand"] == estimand and e.get("available", True)
    ]
    fig, ax = plt.subplots(figsize=(7, 0.5 * max(len(entries), 4) + 1))
    ys, labels = [], []
    for i, e in enumerate(entries):
        lo, hi = e["coef"] - 1.96 * e["se"], e["coef"] + 1.96 * e["se"]
        ax.plot([lo, hi], [i, i], color="tab:blue", lw=1.5)
        ax.plot([e["coef"]], [i], marker="o", color="tab:blue")
        ys.append(i)
        labels.append(f"{PAIR_LABELS.get(e['pair'], e['pair'])} / {OUTCOME_LABELS[e['outcome']]}")
    ax.axvline(0.0, color="gray", lw=0.8, ls="--")
    ax.set_yticks(ys)
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("standardized effect (95% CI)")
    ax.set_title(f"{estimand} effects")
    fig.tight_layout()
    _save(fig, path)


def prepost_figure(header: list[str], rows: list[list], path: Path) -> None:
    outcomes = [o for o in OUTCOMES]
    fig, axes = plt.subplots(1, len(outcomes), figsize=(3 * len(outcomes), 3.2))
    arms = header[2:]
    x = np.arange(len(arms))
    width = 0.35
    for ax, outcome in zip(np.atleast_1d(axes), outcomes):
        label = OUTCOME_LABELS[outcome]
        pre = [float(r[2 + i]) if r[2 + i] else 0.0 for r in rows if r[0] == label and r[1] == "pre" for i in range(len(arms))]
        post = [float(r[2 + i]) if r[2 + i] else 0.0 for r in rows if r[0] == label and r[1] == "post" for i in range(len(arms))]
        ax.bar(x - width / 2, pre, width, label="pre", color="tab:gray")
        ax.bar(x + width / 2, post, width, label="post", color="tab:blue")
        ax.set_xticks(x)
        ax.set_xticklabels(arms, rotation=30, fontsize=7)
        ax.set_title(label, fontsize=9)
    np.atleast_1d(axes)[0].legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def exclusion_figure(header: list[str], rows: list[list], path: Path) -> None:
    caps = [h.replace("Following (cap ", "").rstrip(")") for h in header[2:]]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    x = np.arange(len(caps))
    for row in rows:
        coefs = []
        for cell in row[2:]:
            coefs.append(float(cell.split(" ")[0]) if cell and cell != "n/a" else np.nan)
        ax.plot(x, coefs, marker="o", label=f"{row[0]} {row[1]}")
    ax.set_xticks(x)
    ax.set_xticklabels(caps)
    ax.set_xlabel("absolute follow-change cap")
    ax.set_ylabel("Following effect")
    ax.axhline(0.0, color="gray", lw=0.8, ls="--")
    ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, path)


# --- entry point ------------------------------------------------------------


def emit_report(config, out: Path) -> list[Path]:
    effects = json.loads((out / "effects.json").read_text(encoding="utf-8"))
    outputs: list[Path] = []
    bundle: dict = {}

    header, rows = prepost_table(out)
    path = out / "report_prepost_means.csv"
    _write_csv(path, header, rows)
    outputs.append(path)
    bundle["prepost_means"] = {"header": header, "rows": rows}
    prepost_png = out / "report_prepost_means.png"
    prepost_figure(header, rows, prepost_png)
    outputs.append(prepost_png)

    bal_header, bal_rows = activity_balance_table(out)
    path = out / "report_balance_activity.csv"
    _write_csv(path, bal_header, bal_rows)
    outputs.append(path)
    bundle["balance_activity"] = {"header": bal_header, "rows": bal_rows}

    account_csv = out / "balance_account.csv"
    if account_csv.exists():
        with account_csv.open(newline="", encoding="utf-8") as fh:
            reader = list(csv.reader(fh))
        bundle["balance_account"] = {"header": reader[0], "rows": reader[1:]}

    for estimand, (e_header, e_rows) in effects_tables(effects).items():
        path = out / f"report_effects_{estimand.lower()}.csv"
        _write_csv(path, e_header, e_rows)
        outputs.append(path)
        bundle[f"effects_{estimand}"] = {"header": e_header, "rows": e_rows}
        png = out / f"report_effects_{estimand.lower()}.png"
        forest_figure(effects, estimand, png)
        outputs.append(png)

    x_header, x_rows = exclusion_variant_table(effects)
    path = out / "report_exclusion_variants.csv"
    _write_csv(path, x_header, x_rows)
    outputs.append(path)
    bundle["exclusion_variants"] = {"header": x_header, "rows": x_rows}
    png = out / "report_exclusion_variants.png"
    exclusion_figure(x_header, x_rows, png)
    outputs.append(png)

    for split, (s_header, s_rows) in subgroup_tables(effects).items():
        path = out / f"report_subgroup_{split}.csv"
        _write_csv(path, s_header, s_rows)
        outputs.append(path)
        bundle[f"subgroup_{split}"] = {"header": s_header, "rows": s_rows}

    json_path = out / "report.json"
    json_path.write_text(json.dumps(bundle, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs.append(json_path)

    text_path = out / "report.txt"
    with text_path.open("w", encoding="utf-8", newline="\n") as fh:
        for name in sorted(bundle):
            table = bundle[name]
            fh.write(f"== {name} ==\n")
            widths = [
                max(len(str(table["header"][i])), *(len(str(r[i])) for r in table["rows"]))
                if table["rows"]
                else len(str(table["header"][i]))
                for i in range(len(table["header"]))
            ]
            fh.write("  ".join(str(h).ljust(w) for h, w in zip(table["header"], widths)) + "\n")
            for row in table["rows"]:
                fh.write("  ".join(str(c).ljust(w) for c, w in zip(row, widths)) + "\n")
            fh.write("\n")
    outputs.append(text_path)
    return outputs
