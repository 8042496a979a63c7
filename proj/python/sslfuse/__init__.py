"""SSL feature fusion for conformer speech recognition."""

from ._sslfuse import (
    ConfigError,
    Error,
    FormatError,
    InputError,
    LengthError,
    NumericError,
    ShapeError,
    StorageError,
    UsageError,
    cli,
    corpus_wer,
    ctc_feasible,
    ctc_loss,
    decode_ids,
    encode_text,
    fbank,
    fuse_sfa,
    gen_toy_corpus,
    lr_at,
    mel_centers,
    param_count,
    read_features,
    wer,
    write_features,
)

__all__ = [name for name in dir() if not name.startswith("_")]
