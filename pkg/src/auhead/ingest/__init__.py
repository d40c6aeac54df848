from .audio import (
    AudioFeatureProvider,
    AudioFeatureSequence,
    ConditioningSequence,
    SpectralEnergyProvider,
    audio_features,
    build_conditioning,
)
from .landmark_io import read_landmark_file, write_landmark_file
from .openface import read_openface_au_csv, write_openface_au_csv
from .rig import (
    RigClip,
    RigSpec,
    ToyDataset,
    default_base_face,
    default_rig_spec,
    load_dataset,
    load_image,
    render_face,
    rig_landmarks,
    save_dataset,
    save_image,
    synth_rig_generate,
)

__all__ = [
    "AudioFeatureProvider",
    "AudioFeatureSequence",
    "ConditioningSequence",
    "SpectralEnergyProvider",
    "audio_features",
    "build_conditioning",
    "read_landmark_file",
    "write_landmark_file",
    "read_openface_au_csv",
    "write_openface_au_csv",
    "RigClip",
    "RigSpec",
    "ToyDataset",
    "default_base_face",
    "default_rig_spec",
    "load_dataset",
    "load_image",
    "render_face",
    "rig_landmarks",
    "save_dataset",
    "save_image",
    "synth_rig_generate",
]
