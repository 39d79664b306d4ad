from .io import (
    AnnotationSet, FormatError, Spectrogram, FRAMES_PER_SECOND,
    read_annotations, read_spectrogram, read_wav,
    write_annotations, write_pgm, write_spectrogram, write_wav,
)
from .mel import AudioClip, mel_filterbank, mel_spectrogram
from .synth import ANOMALY_TYPES, SynthClip, synth_clip, synth_corpus

__all__ = [
    "AnnotationSet", "FormatError", "Spectrogram", "FRAMES_PER_SECOND",
    "read_annotations", "read_spectrogram", "read_wav",
    "write_annotations", "write_pgm", "write_spectrogram", "write_wav",
    "AudioClip", "mel_filterbank", "mel_spectrogram",
    "ANOMALY_TYPES", "SynthClip", "synth_clip", "synth_corpus",
]
