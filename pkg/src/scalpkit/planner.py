"""Inverse-frequency sampling ratios and translation-job planning.

The dataset index maps image id -> severity (0 good, 1 mild, 2 moderate,
3 severe) for each of the three conditions. Jobs pick a random source image
and a target image whose severity cell is drawn with probability inversely
proportional to the cell size; completed jobs carry the target severity for
the translated condition and keep the source's labels for the other two.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import atomic_write_text, substream

log = logging.getLogger("scalpkit.planner")

DISEASES = ("dandruff", "sebum", "erythema")
NUM_SEVERITIES = 4

DatasetIndex = dict[str, dict[str, int]]


class EmptyCell(RuntimeError):
    """A severity cell with no images kept absorbing the target draws."""


def sampling_ratios(counts, eps: float = 1e-9) -> np.ndarray:
    """Normalized inverse frequencies over the four severity levels."""
    counts = np.asarray(counts, dtype=float)
    if counts.shape != (NUM_SEVERITIES,) or (counts < 0).any():
        raise ValueError("counts must be 4 non-negative values")
    inv = 1.0 / (counts + eps)
    return inv / inv.sum()


def severity_counts(index: DatasetIndex, disease: str) -> np.ndarray:
    counts = np.zeros(NUM_SEVERITIES, dtype=int)
    for labels in index.values():
        counts[labels[disease]] += 1
    return counts


@dataclass(frozen=True)
class TranslationJob:
    source_id: str
    target_id: str
    disease: str
    target_severity: int
    mask_path: str | None = None

    def __post_init__(self):
        if self.source_id == self.target_id:
            raise ValueError("source and target must differ")
        if self.disease not in DISEASES:
            raise ValueError(f"unknown disease {self.disease!r}")
        if not 0 <= self.target_severity < NUM_SEVERITIES:
            raise ValueError("target severity must be 0..3")


@dataclass(frozen=True)
class SkippedJob:
    job_index: int
    reason: str


def _cells(index: DatasetIndex, disease: str) -> list[list[str]]:
    cells: list[list[str]] = [[] for _ in range(NUM_SEVERITIES)]
    for image_id in sorted(index):
        cells[index[image_id][disease]].append(image_id)
    return cells


def _satisfiable(cells_by_disease, src_severities, higher_only: bool) -> bool:
    """Is any (source, severity, target) tuple drawable at all?"""
    for disease, cells in cells_by_disease.items():
        nonempty = [s for s in range(NUM_SEVERITIES) if cells[s]]
        if higher_only:
            for sev in src_severities[disease]:
                if any(s > sev for s in nonempty):
                    return True
        else:
            total = sum(len(cells[s]) for s in nonempty)
            if total >= 2:
                return True
    return False


def plan_jobs(
    index: DatasetIndex,
    num_jobs: int,
    seed: int,
    *,
    ratios: dict[str, np.ndarray] | None = None,
    diseases: tuple[str, ...] = DISEASES,
    higher_only: bool = True,
    mask_dir: str | None = None,
    max_retries: int = 100,
) -> tuple[list[TranslationJob], list[SkippedJob]]:
    """Draw translation jobs by bounded rejection sampling.

    Target severities follow `ratios` (per-disease, computed from the index
    when omitted). Each attempt draws a fresh (source, disease, target
    severity, target) tuple and rejects it when the severity cell is empty,
    the target equals the source, or higher_only is violated; rejecting the
    whole tuple keeps the accepted target-severity frequencies at the
    ratios. A job whose constraints are unsatisfiable is skipped and
    reported; exhausting the retries while valid tuples exist means an
    empty cell is hogging the ratio mass, which is raised as EmptyCell.
    """
    if not index:
        raise ValueError("dataset index is empty")
    if num_jobs < 0:
        raise ValueError("num_jobs must be >= 0")
    ids = sorted(index)
    cells_by_disease = {d: _cells(index, d) for d in diseases}
    if ratios is None:
        ratios_by_disease = {d: sampling_ratios(severity_counts(index, d)) for d in diseases}
    else:
        missing = [d for d in diseases if d not in ratios]
        if missing:
            raise ValueError(f"no ratios for diseases: {missing}")
        ratios_by_disease = {d: np.asarray(ratios[d], dtype=float) for d in diseases}
    src_severities = {d: {index[i][d] for i in ids} for d in diseases}

    rng = substream(seed, "plan")
    jobs: list[TranslationJob] = []
    skips: list[SkippedJob] = []
    for job_index in range(num_jobs):
        picked = None
        saw_empty_cell = False
        for _ in range(max_retries):
            source_id = ids[rng.integers(0, len(ids))]
            disease = diseases[rng.integers(0, len(diseases))]
            severity = int(rng.choice(NUM_SEVERITIES, p=ratios_by_disease[disease]))
            if higher_only and severity <= index[source_id][disease]:
                continue
            cell = cells_by_disease[disease][severity]
            if not cell:
                saw_empty_cell = True
                continue
            target_id = cell[rng.integers(0, len(cell))]
            if target_id == source_id:
                continue
            mask_path = str(Path(mask_dir) / f"{source_id}.png") if mask_dir else None
            picked = TranslationJob(source_id, target_id, disease, severity, mask_path)
            break
        if picked is not None:
            jobs.append(picked)
            continue
        if _satisfiable(cells_by_disease, src_severities, higher_only):
            raise EmptyCell(
                f"job {job_index}: {max_retries} draws exhausted while an empty severity "
                "cell keeps absorbing the ratio mass"
                + (" (saw empty cells)" if saw_empty_cell else "")
            )
        reason = "no target with a strictly higher severity" if higher_only else "no distinct target image"
        log.warning("skipping job %d: %s", job_index, reason)
        skips.append(SkippedJob(job_index, reason))
    return jobs, skips


def post_plan_distribution(index: DatasetIndex, jobs: list[TranslationJob]) -> dict[str, np.ndarray]:
    """Original counts plus one per job: at the target severity for the
    translated condition, at the source's severity for the other two."""
    counts = {d: severity_counts(index, d) for d in DISEASES}
    for job in jobs:
        for disease in DISEASES:
            if disease == job.disease:
                counts[disease][job.target_severity] += 1
            else:
                counts[disease][index[job.source_id][disease]] += 1
    return counts


def read_index(path: str | Path) -> DatasetIndex:
    """CSV with header id,dandruff,sebum,erythema and severities 0-3."""
    index: DatasetIndex = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"id", *DISEASES}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"index must have columns {sorted(required)}")
        for row in reader:
            labels = {}
            for disease in DISEASES:
                sev = int(row[disease])
                if not 0 <= sev < NUM_SEVERITIES:
                    raise ValueError(f"severity out of range for {row['id']}: {sev}")
                labels[disease] = sev
            index[row["id"]] = labels
    if not index:
        raise ValueError(f"empty dataset index: {path}")
    return index


def job_to_dict(job: TranslationJob) -> dict:
    return {
        "source_id": job.source_id,
        "target_id": job.target_id,
        "disease": job.disease,
        "target_severity": job.target_severity,
        "mask_path": job.mask_path,
    }


def write_plan(path: str | Path, jobs: list[TranslationJob]) -> None:
    """JSON lines, one TranslationJob per line."""
    lines = [json.dumps(job_to_dict(job), sort_keys=True) for job in jobs]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_plan(path: str | Path) -> list[TranslationJob]:
    jobs = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            doc = json.loads(line)
            jobs.append(
                TranslationJob(
                    doc["source_id"],
                    doc["target_id"],
                    doc["disease"],
                    int(doc["target_severity"]),
                    doc.get("mask_path"),
                )
            )
    return jobs
