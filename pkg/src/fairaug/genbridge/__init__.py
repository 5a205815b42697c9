"""Bridge to the external image generator: prompts, job files, ingestion,
real/synthetic mixing and a mock generator for tests."""

from .ingest import IngestReport, ingest_synthetic
from .jobs import GenerationJob, emit_generation_jobs, format_jobs, read_jobs
from .mix import mix_datasets, synthetic_count
from .mock import mock_generate, render_mock, rim_band
from .prompts import BMI_WORDS, assemble_prompt, bmi_category

__all__ = [
    "BMI_WORDS", "GenerationJob", "IngestReport", "assemble_prompt", "bmi_category",
    "emit_generation_jobs", "format_jobs", "ingest_synthetic", "mix_datasets",
    "mock_generate", "read_jobs", "render_mock", "rim_band", "synthetic_count",
]
