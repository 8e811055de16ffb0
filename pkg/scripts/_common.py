"""Shared helpers for the experiment scripts."""
from __future__ import annotations

import argparse
from pathlib import Path

from flowdepth import io as fio
from flowdepth.metrics import records_to_csv


def parser(doc: str) -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(description=doc.strip().splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default=None, help="directory for records and CSV (optional)")
    return ap


def save(out, name: str, rows: list[dict]):
    if out is None:
        return
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / f"{name}.csv").write_text(records_to_csv(rows))
    for r in rows:
        fio.write_record(d / f"{name}_{r['arm']}.txt", {k: v for k, v in r.items() if k != "arm"})
