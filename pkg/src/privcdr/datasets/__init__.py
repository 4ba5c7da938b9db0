"""Interaction and feature ingestion, filtering, splitting and synthetic data."""

from .features import (
    ENTITY_CODES,
    MODALITY_CODES,
    FeatureTable,
    dumps_feature_table,
    loads_feature_table,
    read_feature_table,
    write_feature_table,
)
from .interactions import (
    DOMAINS,
    DatasetError,
    InteractionTable,
    SplitSpec,
    kcore_filter,
    leave_one_out_split,
    load_interactions,
    sample_negatives,
    split_from_test,
    table_from_records,
    write_interactions,
)
from .prepared import MODALITIES, PreparedData, PreparedDomain, load_prepared, prepare_dataset, save_prepared
from .synthetic import SyntheticCDR, SyntheticSpec, generate_synthetic_cdr, write_raw_dataset
