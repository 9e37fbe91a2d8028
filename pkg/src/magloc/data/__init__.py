"""Trial model, MagPie ingestion, resampling and synthetic buildings."""

from magloc.data.magpie import (
    DEFAULT_EXCLUSIONS,
    MAGPIE_COLUMN_MAP,
    ColumnMap,
    exclude_trials,
    ingest_magpie,
    ingest_tree,
    inspect_files,
)
from magloc.data.resample import resample_align
from magloc.data.synth import SynthConfig, synth_generate
from magloc.data.trial import (
    NORMALIZED_HEADER,
    BuildingSet,
    SampleRecord,
    Trial,
    read_building,
    read_trial_csv,
    write_building,
    write_trial_csv,
)

__all__ = [
    "DEFAULT_EXCLUSIONS",
    "MAGPIE_COLUMN_MAP",
    "NORMALIZED_HEADER",
    "BuildingSet",
    "ColumnMap",
    "SampleRecord",
    "SynthConfig",
    "Trial",
    "exclude_trials",
    "ingest_magpie",
    "ingest_tree",
    "inspect_files",
    "read_building",
    "read_trial_csv",
    "resample_align",
    "synth_generate",
    "write_building",
    "write_trial_csv",
]
