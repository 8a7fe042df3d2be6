"""Synthetic corpus generation, ingestion and preprocessing."""

from .records import (
    AugmentationParams,
    ClipRecord,
    CorpusError,
    CorpusSpec,
    SampleWindow,
    WindowProvenance,
)
from .synth import (
    EMOTION_ATTRIBUTES,
    aperture_from_envelope,
    attribute_region_mask,
    clip_geometry,
    clip_seed_for,
    decode_aperture,
    frame_envelope,
    render_clip,
    render_frame,
    synth_generate,
)
from .melspec import MelParams, melspectrogram
from .windows import (
    DEFAULT_T,
    MEL_FRAMES_PER_WINDOW,
    make_window,
    mask_frames,
    mel_chunk_for_window,
    sample_ref_start,
    split,
)
from .augment import (
    AugmentationRanges,
    apply_augmentation,
    apply_to_frames,
    sample_augmentation,
)
from .ingest import IngestReport, ingest_manifest
from .io import (
    read_clip,
    read_provenance,
    read_wav,
    write_clip,
    write_corpus,
    write_provenance,
    write_wav,
)

__all__ = [
    "AugmentationParams", "AugmentationRanges", "ClipRecord", "CorpusError",
    "CorpusSpec", "DEFAULT_T", "EMOTION_ATTRIBUTES", "IngestReport",
    "MEL_FRAMES_PER_WINDOW", "MelParams", "SampleWindow", "WindowProvenance",
    "aperture_from_envelope", "apply_augmentation", "apply_to_frames",
    "attribute_region_mask", "clip_geometry", "clip_seed_for", "decode_aperture",
    "frame_envelope", "ingest_manifest", "make_window", "mask_frames",
    "mel_chunk_for_window", "melspectrogram", "read_clip", "read_provenance",
    "read_wav", "render_clip", "render_frame", "sample_augmentation",
    "sample_ref_start", "split", "synth_generate", "write_clip", "write_corpus",
    "write_provenance", "write_wav",
]
