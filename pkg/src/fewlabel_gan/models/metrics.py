"""Metric records and cross-seed reports."""

from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field


class MetricRecord(BaseModel):
    """One evaluation of one run; a line of metrics.jsonl."""

    step: int = Field(..., ge=0, description="Generator step")
    seed: int = Field(..., description="Training seed")
    method: str = Field(..., description="Method name")
    run_name: str = Field(..., description="Method name plus k% / cluster / soft suffixes")
    k_percent: float = Field(default=100.0)
    label_mode: Optional[str] = Field(default=None)
    fid_mean: float = Field(..., description="FID averaged over the fake sets")
    is_mean: float = Field(..., description="IS averaged over the fake sets")
    fid_sets: List[float] = Field(default_factory=list)
    is_sets: List[float] = Field(default_factory=list)
    embedder_id: str = Field(..., description="Embedder the scores were computed with")
    n_fake: int = Field(..., ge=1)
    n_sets: int = Field(..., ge=1)
    collapsed: bool = Field(default=False, description="Run diverged before this record")

    class Config:
        json_schema_extra = {
            "example": {
                "step": 2000,
                "seed": 1,
                "method": "S3GAN",
                "run_name": "S3GAN-k10",
                "k_percent": 10.0,
                "label_mode": "HARD",
                "fid_mean": 41.3,
                "is_mean": 2.9,
                "embedder_id": "classifier-synthetic-d64-3f2a9c1b04de",
                "n_fake": 10000,
                "n_sets": 5,
                "collapsed": False,
            }
        }


class SeedResult(BaseModel):
    """Final metrics of one seed."""

    seed: int
    step: int
    fid: float
    inception_score: float
    collapsed: bool = False


def _population_std(values: List[float]) -> float:
    return float(np.std(values)) if len(values) > 1 else 0.0


class MetricsReport(BaseModel):
    """Per-seed finals plus cross-seed median, mean and population std."""

    run_name: str
    method: str
    k_percent: float = 100.0
    label_mode: Optional[str] = None
    embedder_id: str
    seeds: List[SeedResult] = Field(default_factory=list)
    history: List[MetricRecord] = Field(default_factory=list)

    @property
    def fids(self) -> List[float]:
        return [s.fid for s in self.seeds]

    @property
    def inception_scores(self) -> List[float]:
        return [s.inception_score for s in self.seeds]

    @property
    def median_fid(self) -> float:
        return float(np.median(self.fids))

    @property
    def median_is(self) -> float:
        return float(np.median(self.inception_scores))

    @property
    def mean_fid(self) -> float:
        return float(np.mean(self.fids))

    @property
    def std_fid(self) -> float:
        return _population_std(self.fids)

    @property
    def mean_is(self) -> float:
        return float(np.mean(self.inception_scores))

    @property
    def std_is(self) -> float:
        return _population_std(self.inception_scores)

    @property
    def collapsed_seeds(self) -> List[int]:
        return [s.seed for s in self.seeds if s.collapsed]

    @classmethod
    def from_records(cls, records: List[MetricRecord]) -> "MetricsReport":
        """
        Group the records of one run name; the final record of each seed is the
        one with the largest step.
        """
        if not records:
            raise ValueError("A report needs at least one metric record")
        first = records[0]
        finals: Dict[int, MetricRecord] = {}
        for record in records:
            current = finals.get(record.seed)
            if current is None or record.step >= current.step:
                finals[record.seed] = record
        seeds = [
            SeedResult(
                seed=r.seed,
                step=r.step,
                fid=r.fid_mean,
                inception_score=r.is_mean,
                collapsed=any(x.collapsed for x in records if x.seed == r.seed),
            )
            for r in sorted(finals.values(), key=lambda r: r.seed)
        ]
        return cls(
            run_name=first.run_name,
            method=first.method,
            k_percent=first.k_percent,
            label_mode=first.label_mode,
            embedder_id=first.embedder_id,
            seeds=seeds,
            history=sorted(records, key=lambda r: (r.seed, r.step)),
        )
