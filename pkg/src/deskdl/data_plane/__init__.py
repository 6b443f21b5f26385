"""Read-once staging planner, transfer executor and prefetch pipeline."""

from .catalog import CatalogFile, DatasetCatalog, assign_samples, files_needed
from .pipeline import CheckedQueue, PipelineError, PipelineLog, pipeline_run
from .staging import (StagingEstimate, StagingPlan, StagingReport,
                      execute_staging, estimate_staging, modeled_read_bw,
                      plan_staging, synthetic_payload)

__all__ = [
    "CatalogFile", "CheckedQueue", "DatasetCatalog", "PipelineError",
    "PipelineLog", "StagingEstimate", "StagingPlan", "StagingReport",
    "assign_samples", "execute_staging", "estimate_staging", "files_needed",
    "modeled_read_bw", "pipeline_run", "plan_staging", "synthetic_payload",
]
